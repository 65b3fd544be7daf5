"""Pauli strings, stabilizer tableaus and Clifford conjugation maps.

A Pauli operator on n qubits is stored as two n-bit integers plus a phase
exponent:

    P = i^phase * W_0 W_1 ... W_{n-1}

where the single-qubit letter W_q is encoded by bit q of ``x`` and ``z``:
(0,0) -> I, (1,0) -> X, (0,1) -> Z, (1,1) -> Y.  The letters are the actual
Hermitian Paulis (Y includes its i relative to XZ), so P is Hermitian exactly
when ``phase`` is 0 or 2.

Integers rather than numpy arrays keep products and commutation checks at a
few word operations for the qubit counts used here (n <= 64 or so), and keys
stay hashable.
"""

from __future__ import annotations

__all__ = [
    "PauliString",
    "Tableau",
    "CliffordMap",
    "multiply",
    "commutes",
    "conjugate",
    "puncture",
    "GATES",
    "gate_map",
]

_LETTERS = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}
_BITS = {v: k for k, v in _LETTERS.items()}
_PHASE_PREFIX = {0: "+", 1: "i", 2: "-", 3: "-i"}


class PauliString:
    """Immutable Pauli operator on ``n`` qubits."""

    __slots__ = ("n", "x", "z", "phase")

    def __init__(self, n: int, x: int = 0, z: int = 0, phase: int = 0):
        if x >> n or z >> n:
            raise ValueError("x/z bits outside of qubit range")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "phase", phase & 3)

    def __setattr__(self, *_):
        raise AttributeError("PauliString is immutable")

    @classmethod
    def from_label(cls, label: str, n: int | None = None) -> "PauliString":
        """Parse 'XIZY' or a product such as 'X3*X1' / '-iZ0*X2'."""
        label = label.strip()
        phase = 0
        for prefix, ph in (("-i", 3), ("+i", 1), ("i", 1), ("-", 2), ("+", 0)):
            if label.startswith(prefix):
                phase = ph
                label = label[len(prefix):]
                break
        if "*" in label or (label and label[-1].isdigit()):
            terms = []
            for term in label.split("*"):
                letter, qubit = term[0], int(term[1:])
                terms.append((letter, qubit))
            size = n if n is not None else max(q for _, q in terms) + 1
            out = cls(size, phase=phase)
            for letter, qubit in terms:
                xb, zb = _BITS[letter]
                out = multiply(out, cls(size, xb << qubit, zb << qubit))
            return out
        size = n if n is not None else len(label)
        x = z = 0
        for q, letter in enumerate(label):
            xb, zb = _BITS[letter]
            x |= xb << q
            z |= zb << q
        return cls(size, x, z, phase)

    @classmethod
    def single(cls, n: int, qubit: int, letter: str, phase: int = 0) -> "PauliString":
        xb, zb = _BITS[letter]
        return cls(n, xb << qubit, zb << qubit, phase)

    def letter(self, qubit: int) -> str:
        return _LETTERS[((self.x >> qubit) & 1, (self.z >> qubit) & 1)]

    @property
    def weight(self) -> int:
        return (self.x | self.z).bit_count()

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.n) if (self.x | self.z) >> q & 1)

    def is_identity(self) -> bool:
        return self.x == 0 and self.z == 0

    def is_hermitian(self) -> bool:
        return self.phase % 2 == 0

    @property
    def sign(self) -> int:
        """+1 or -1 for a Hermitian string."""
        if not self.is_hermitian():
            raise ValueError("sign undefined for non-Hermitian phase")
        return 1 if self.phase == 0 else -1

    def negate(self) -> "PauliString":
        return PauliString(self.n, self.x, self.z, self.phase + 2)

    def adjoint(self) -> "PauliString":
        return PauliString(self.n, self.x, self.z, -self.phase)

    def label(self) -> str:
        body = "".join(self.letter(q) for q in range(self.n))
        return (_PHASE_PREFIX[self.phase] if self.phase else "") + body

    def product_label(self) -> str:
        """Render as 'X11*X18*X13*X6' (ascending qubit order)."""
        terms = "*".join(f"{self.letter(q)}{q}" for q in self.support)
        prefix = _PHASE_PREFIX[self.phase] if self.phase else ""
        return prefix + (terms or "I")

    def __eq__(self, other) -> bool:
        return (isinstance(other, PauliString) and self.n == other.n
                and self.x == other.x and self.z == other.z
                and self.phase == other.phase)

    def __hash__(self) -> int:
        return hash((self.n, self.x, self.z, self.phase))

    def __mul__(self, other: "PauliString") -> "PauliString":
        return multiply(self, other)

    def __repr__(self) -> str:
        return f"PauliString({self.label()!r})"


def multiply(a: PauliString, b: PauliString) -> PauliString:
    """Exact product a*b with phase tracking.

    Per qubit the letter encoding means W(x,z) = i^{x z} X^x Z^z; collecting
    the X/Z reorder sign and the Y bookkeeping gives the i-exponent
    t(a) + t(b) - t(ab) + 2*|z_a & x_b| with t(p) = |x_p & z_p|.
    """
    if a.n != b.n:
        raise ValueError("length mismatch")
    x = a.x ^ b.x
    z = a.z ^ b.z
    g = ((a.x & a.z).bit_count() + (b.x & b.z).bit_count()
         - (x & z).bit_count() + 2 * (a.z & b.x).bit_count())
    return PauliString(a.n, x, z, a.phase + b.phase + g)


def commutes(a: PauliString, b: PauliString) -> bool:
    """True when the two operators commute (phases never matter)."""
    if a.n != b.n:
        raise ValueError("length mismatch")
    return ((a.x & b.z).bit_count() + (a.z & b.x).bit_count()) % 2 == 0


def puncture(p: PauliString, A) -> PauliString:
    """Restriction of ``p`` to the qubits in A (ascending), phase retained."""
    qubits = sorted(A)
    x = z = 0
    for i, q in enumerate(qubits):
        x |= ((p.x >> q) & 1) << i
        z |= ((p.z >> q) & 1) << i
    return PauliString(len(qubits), x, z, p.phase)


def embed(p: PauliString, n: int, where: list[int]) -> PauliString:
    """Place a k-qubit string onto qubits ``where`` of an n-qubit register."""
    x = z = 0
    for i, q in enumerate(where):
        x |= ((p.x >> i) & 1) << q
        z |= ((p.z >> i) & 1) << q
    return PauliString(n, x, z, p.phase)


class CliffordMap:
    """Conjugation action of a k-qubit Clifford unitary.

    Stored as the images U X_i U^dag and U Z_i U^dag, each a k-qubit
    PauliString.  The map is valid when the images satisfy the same
    commutation relations as the generators they replace.
    """

    __slots__ = ("k", "x_images", "z_images")

    def __init__(self, x_images: list[PauliString], z_images: list[PauliString]):
        self.k = len(x_images)
        self.x_images = tuple(x_images)
        self.z_images = tuple(z_images)

    def validate(self) -> None:
        imgs = list(self.x_images) + list(self.z_images)
        for p in imgs:
            if p.n != self.k:
                raise ValueError("image size mismatch")
            if not p.is_hermitian():
                raise ValueError("image must be Hermitian")
        for i in range(self.k):
            for j in range(self.k):
                if commutes(self.x_images[i], self.z_images[j]) != (i != j):
                    raise ValueError("X/Z image commutation broken")
                if i < j:
                    if not commutes(self.x_images[i], self.x_images[j]):
                        raise ValueError("X images must commute")
                    if not commutes(self.z_images[i], self.z_images[j]):
                        raise ValueError("Z images must commute")

    def then(self, other: "CliffordMap") -> "CliffordMap":
        """Map for (other after self): first apply self, then other."""
        targets = list(range(self.k))
        return CliffordMap(
            [conjugate_pauli(p, other, targets) for p in self.x_images],
            [conjugate_pauli(p, other, targets) for p in self.z_images],
        )

    def inverse(self) -> "CliffordMap":
        k = self.k
        xs = [None] * k
        zs = [None] * k
        # The inverse image of X_i is the unique string with the right
        # commutation pattern against the forward images; build it by
        # accumulating generators whose forward image anticommutes.
        for kind, out in (("x", xs), ("z", zs)):
            for i in range(k):
                probe = PauliString.single(k, i, "X" if kind == "x" else "Z")
                acc = PauliString(k)
                for j in range(k):
                    if not commutes(probe, self.z_images[j]):
                        acc = multiply(acc, PauliString.single(k, j, "X"))
                    if not commutes(probe, self.x_images[j]):
                        acc = multiply(acc, PauliString.single(k, j, "Z"))
                acc = PauliString(k, acc.x, acc.z, 0)
                # Fix the sign so that applying the forward map returns probe.
                forward = conjugate_pauli(acc, self, list(range(k)))
                if forward.phase != probe.phase:
                    acc = acc.negate()
                out[i] = acc
        return CliffordMap(xs, zs)


def conjugate_pauli(p: PauliString, U: CliffordMap, targets: list[int]) -> PauliString:
    """U P U^dag where U acts on ``targets`` of the register holding p."""
    if len(targets) != U.k:
        raise ValueError("target count must match map arity")
    tmask = 0
    for q in targets:
        tmask |= 1 << q
    acc = PauliString(p.n, p.x & ~tmask, p.z & ~tmask, p.phase)
    for i, q in enumerate(targets):
        xb = (p.x >> q) & 1
        zb = (p.z >> q) & 1
        if xb:
            acc = multiply(acc, embed(U.x_images[i], p.n, targets))
        if zb:
            acc = multiply(acc, embed(U.z_images[i], p.n, targets))
        if xb and zb:
            acc = PauliString(acc.n, acc.x, acc.z, acc.phase + 1)
    return acc


class Tableau:
    """Stabilizer generators G_i and destabilizers D_i of a pure state.

    All 2n generators are Hermitian; the G_i commute pairwise, the D_i
    commute pairwise, and G_i anticommutes with D_j exactly when i == j.
    """

    __slots__ = ("n", "gens", "destabs")

    def __init__(self, gens: list[PauliString], destabs: list[PauliString]):
        self.n = len(gens)
        self.gens = list(gens)
        self.destabs = list(destabs)

    @classmethod
    def zero_state(cls, n: int) -> "Tableau":
        gens = [PauliString.single(n, q, "Z") for q in range(n)]
        destabs = [PauliString.single(n, q, "X") for q in range(n)]
        return cls(gens, destabs)

    def copy(self) -> "Tableau":
        return Tableau(list(self.gens), list(self.destabs))

    def validate(self) -> None:
        n = self.n
        if len(self.destabs) != n:
            raise ValueError("generator/destabilizer count mismatch")
        for row in self.gens + self.destabs:
            if row.n != n or not row.is_hermitian():
                raise ValueError("rows must be Hermitian n-qubit strings")
        for i in range(n):
            for j in range(n):
                if not commutes(self.gens[i], self.gens[j]):
                    raise ValueError(f"stabilizers {i},{j} anticommute")
                if not commutes(self.destabs[i], self.destabs[j]):
                    raise ValueError(f"destabilizers {i},{j} anticommute")
                if commutes(self.gens[i], self.destabs[j]) != (i != j):
                    raise ValueError(f"pairing broken at {i},{j}")


def conjugate(t: Tableau, U: CliffordMap, targets: list[int]) -> Tableau:
    """Conjugate every row of the tableau by U on ``targets``."""
    return Tableau([conjugate_pauli(g, U, targets) for g in t.gens],
                   [conjugate_pauli(d, U, targets) for d in t.destabs])


def _registry() -> dict[str, CliffordMap]:
    P = PauliString.from_label
    one = {
        "I": (["X"], ["Z"]),
        "X": (["X"], ["-Z"]),
        "Y": (["-X"], ["-Z"]),
        "Z": (["-X"], ["Z"]),
        "H": (["Z"], ["X"]),
        "S": (["Y"], ["Z"]),
        "S_DAG": (["-Y"], ["Z"]),
        "H_YZ": (["-X"], ["Y"]),
    }
    two = {
        "CZ": (["XZ", "ZX"], ["ZI", "IZ"]),
        "CX": (["XX", "IX"], ["ZI", "ZZ"]),
    }
    out = {}
    for name, (xs, zs) in one.items():
        out[name] = CliffordMap([P(l) for l in xs], [P(l) for l in zs])
    for name, (xs, zs) in two.items():
        out[name] = CliffordMap([P(l) for l in xs], [P(l) for l in zs])
    for g in out.values():
        g.validate()
    return out


GATES = _registry()


def gate_map(name: str) -> CliffordMap:
    try:
        return GATES[name]
    except KeyError:
        raise KeyError(f"unknown Clifford gate {name!r}") from None
