"""Restricted-rank trajectory simulator over a single stabilizer tableau.

A state is stored as

    psi = sum_s C_s D^s |S>

where |S> is the joint +1 eigenstate of the stabilizer generators G_i,
D^s is the product of destabilizers D_i over the set bits of the
syndrome key s, and C_s is a sparse map from integer bit-masks to
complex coefficients.  Clifford gates and Pauli channels act on the
tableau alone; general channels act through a canonical local
entanglement (CLE) reduction that localizes the support qubits plus p
ancillas, where p is the bipartite entanglement entropy of the cut.

Tableau re-expressions use only the four canonical moves (swap, GG,
DG1, DG2), each of which preserves the represented state vector and
the magnitudes of the coefficients.  Global phase is not tracked.
"""

from __future__ import annotations

import math

import numpy as np

from .pauli import (
    PauliString,
    Tableau,
    commutes,
    conjugate_pauli,
    embed,
    gate_map,
    multiply,
    puncture,
)

__all__ = [
    "RankedState",
    "CleForm",
    "LocalState",
    "init_zero",
    "validate_cle",
    "STRICT_CLE",
]

# Re-validate every CLE reduction against the full invariant set.  The
# check is quadratic in register size and dominates tight sampling
# loops, so it is opt-in; the structural tests switch it on.
STRICT_CLE = False

_LUT_CACHE = {}


def _clifford_lut(u):
    """Conjugation table for a small Clifford map.

    Entry ``pat`` (x bits low, z bits high) holds (x', z', phase') for
    the image of the phase-0 letter pattern, so row updates need no
    string algebra.
    """
    key = (u.x_images, u.z_images)
    lut = _LUT_CACHE.get(key)
    if lut is None:
        k = u.k
        span = list(range(k))
        lut = []
        for pat in range(1 << (2 * k)):
            x = pat & ((1 << k) - 1)
            z = pat >> k
            img = conjugate_pauli(PauliString(k, x, z), u, span)
            lut.append((img.x, img.z, img.phase))
        _LUT_CACHE[key] = lut
    return lut

_LETTER_BITS = {"X": (1, 0), "Z": (0, 1), "Y": (1, 1)}

# Pauli matrices for the dense bridges (to_dense, local channel algebra).
_MATS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# Columns are the +1/-1 eigenstates of the letter; the partner letter
# (X for Z, Z for X and Y) maps the 0 column to the 1 column with
# coefficient exactly +1, so syndrome extraction needs no phase fixups.
_BASIS_COLS = {
    "Z": np.array([[1, 0], [0, 1]], dtype=complex),
    "X": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "Y": np.array([[1, 1], [1j, -1j]], dtype=complex) / math.sqrt(2),
}
_PARTNER = {"Z": "X", "X": "Z", "Y": "Z"}


def _letter_code(p: PauliString, q: int) -> int:
    """0 I, 1 X, 2 Z, 3 Y at qubit q."""
    return ((p.x >> q) & 1) | (((p.z >> q) & 1) << 1)


_CODE_KIND = {1: "X", 2: "Z", 3: "Y"}


def _sym(u: int, v: int, k: int) -> int:
    """Symplectic form of two (x << k) | z packed Pauli vectors."""
    mask = (1 << k) - 1
    return (((u >> k) & v & mask).bit_count() ^ ((v >> k) & u & mask).bit_count()) & 1


def _f2_insert(basis: dict, vec: int) -> int:
    """Reduce vec against the echelon dict and insert the remainder.

    basis maps leading bit -> vector.  Returns the inserted remainder,
    0 when vec was already in the span.
    """
    while vec:
        lead = vec.bit_length() - 1
        if lead not in basis:
            basis[lead] = vec
            return vec
        vec ^= basis[lead]
    return 0


def _f2_member(basis: dict, vec: int) -> bool:
    while vec:
        lead = vec.bit_length() - 1
        if lead not in basis:
            return False
        vec ^= basis[lead]
    return True


def _f2_solve(vecs, target):
    """Mask m with XOR of vecs[i] over the set bits of m == target.

    Returns None when target lies outside the span.
    """
    basis = {}
    for i, v in enumerate(vecs):
        m = 1 << i
        while v:
            lead = v.bit_length() - 1
            if lead not in basis:
                basis[lead] = (v, m)
                break
            bv, bm = basis[lead]
            v ^= bv
            m ^= bm
    mask = 0
    while target:
        lead = target.bit_length() - 1
        if lead not in basis:
            return None
        bv, bm = basis[lead]
        target ^= bv
        mask ^= bm
    return mask


def _f2_inverse(rows):
    """Inverse of a square bit matrix given as row ints (bit c = col c)."""
    m = len(rows)
    aug = [rows[i] | (1 << (m + i)) for i in range(m)]
    for c in range(m):
        piv = next((r for r in range(c, m) if (aug[r] >> c) & 1), None)
        if piv is None:
            raise AssertionError("bit matrix is singular")
        aug[c], aug[piv] = aug[piv], aug[c]
        for r in range(m):
            if r != c and (aug[r] >> c) & 1:
                aug[r] ^= aug[c]
    return [aug[r] >> m for r in range(m)]


def _f2_factor_ops(mat):
    """Row-addition schedule realizing the invertible bit matrix mat.

    Reducing mat to the identity with additions E_L..E_1 factors it as
    E_1..E_L (row additions are involutions), so replaying the recorded
    (i, j) list in reverse as row_i += row_j applies mat itself.
    """
    m = len(mat)
    rows = list(mat)
    ops = []
    for c in range(m):
        if not (rows[c] >> c) & 1:
            src = next((r for r in range(c + 1, m) if (rows[r] >> c) & 1), None)
            if src is None:
                raise AssertionError("row transform is singular")
            rows[c] ^= rows[src]
            ops.append((c, src))
        for r in range(m):
            if r != c and (rows[r] >> c) & 1:
                rows[r] ^= rows[c]
                ops.append((r, c))
    return ops


class CleForm:
    """Result descriptor of a CLE reduction.

    A is the sorted tuple of reduced qubit indices; rows 0..k-1 of the
    tableau hold the single-qubit destabilizers on A in order, rows
    k..k+p-1 the entangled partners.  pivots[j] is the index i(j) < k
    whose punctured generator anticommutes with partner j; it is a
    strictly increasing sequence.
    """

    __slots__ = ("A", "k", "p", "pivots")

    def __init__(self, A, k, p, pivots):
        self.A = tuple(A)
        self.k = k
        self.p = p
        self.pivots = tuple(pivots)

    def __repr__(self):
        return "CleForm(A=%r, k=%d, p=%d, pivots=%r)" % (
            self.A,
            self.k,
            self.p,
            self.pivots,
        )


class LocalState:
    """Ancilla-dressed local view of a ranked state on a qubit subset.

    gens/destabs live on k+p local qubits (the k qubits of A in sorted
    order, then p ancillas).  stored holds, per local row, the
    complementary operator on the extended register (original n qubits
    plus p ancillas) so that row * stored reproduces the global row
    with the ancilla factors cancelling.  sectors maps the syndrome
    bits outside the first k+p rows to dense coefficient vectors over
    the first k+p bits.
    """

    __slots__ = ("k", "p", "A", "n", "gens", "destabs", "stored", "sectors")

    def __init__(self, k, p, A, n, gens, destabs, stored, sectors):
        self.k = k
        self.p = p
        self.A = tuple(A)
        self.n = n
        self.gens = gens
        self.destabs = destabs
        self.stored = stored
        self.sectors = sectors

    @property
    def num_local(self):
        return self.k + self.p

    def basis_matrix(self):
        """Unitary whose column s' is D_local^{s'} |S_local>."""
        return _tableau_basis_matrix(self.gens, self.destabs)

    def density_matrix(self):
        """Local density operator (trace-normalized)."""
        v = self.basis_matrix()
        dim = 1 << self.num_local
        rho = np.zeros((dim, dim), dtype=complex)
        total = 0.0
        for vec in self.sectors.values():
            psi = v @ vec
            rho += np.outer(psi, psi.conj())
            total += float(np.vdot(psi, psi).real)
        if total <= 0:
            raise ValueError("local state has zero weight")
        return rho / total


def _pauli_dense(p: PauliString, n: int) -> np.ndarray:
    """Dense matrix of p on n qubits, little-endian (qubit 0 = LSB)."""
    out = np.array([[1]], dtype=complex)
    for q in range(n - 1, -1, -1):
        out = np.kron(out, _MATS[p.letter(q)])
    return out * (1j) ** p.phase


def _tableau_basis_matrix(gens, destabs):
    nl = len(gens)
    dim = 1 << nl
    psi = None
    for seed in range(dim):
        cand = np.zeros(dim, dtype=complex)
        cand[seed] = 1.0
        for g in gens:
            cand = (cand + _pauli_dense(g, nl) @ cand) / 2.0
        norm = float(np.vdot(cand, cand).real)
        if norm > 1e-9:
            psi = cand / math.sqrt(norm)
            break
    if psi is None:
        raise RuntimeError("stabilizer state projection failed")
    # Fix the global phase: first nonzero amplitude real positive.
    for a in psi:
        if abs(a) > 1e-9:
            psi = psi * (abs(a) / a)
            break
    mats = [_pauli_dense(d, nl) for d in destabs]
    cols = np.zeros((dim, dim), dtype=complex)
    for s in range(dim):
        col = psi
        for i in range(nl):
            if (s >> i) & 1:
                col = mats[i] @ col
        cols[:, s] = col
    return cols


class RankedState:
    """Sparse ranked-state expansion over one destabilizer tableau."""

    __slots__ = ("tab", "coeffs", "labels", "m_max", "eps", "discarded")

    def __init__(self, tab, coeffs, labels=None, m_max=1000, eps=1e-4):
        self.tab = tab
        self.coeffs = coeffs
        self.labels = list(labels) if labels is not None else list(range(tab.n))
        if len(self.labels) != tab.n:
            raise ValueError("label count must match qubit count")
        self.m_max = m_max
        self.eps = eps
        self.discarded = 0.0

    @classmethod
    def zero(cls, n, labels=None, m_max=1000, eps=1e-4):
        if n < 1:
            raise ValueError("need at least one qubit")
        return cls(Tableau.zero_state(n), {0: 1.0 + 0.0j}, labels, m_max, eps)

    @property
    def n(self):
        return self.tab.n

    @property
    def m(self):
        return len(self.coeffs)

    def axis(self, label):
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError("qubit %r is not live" % (label,)) from None

    def norm_sq(self):
        return sum((c * c.conjugate()).real for c in self.coeffs.values())

    def copy(self):
        dup = RankedState(
            self.tab.copy(), dict(self.coeffs), list(self.labels), self.m_max, self.eps
        )
        dup.discarded = self.discarded
        return dup

    # ------------------------------------------------------------------
    # Canonical moves.  Each preserves the represented state vector and
    # the multiset of coefficient magnitudes.
    # ------------------------------------------------------------------

    def swap(self, i, j):
        """Swap generator/destabilizer/syndrome-bit triples i and j."""
        self._check_row(i)
        self._check_row(j)
        if i == j:
            return
        t = self.tab
        t.gens[i], t.gens[j] = t.gens[j], t.gens[i]
        t.destabs[i], t.destabs[j] = t.destabs[j], t.destabs[i]
        bi, bj = 1 << i, 1 << j
        out = {}
        for key, val in self.coeffs.items():
            ki = (key >> i) & 1
            kj = (key >> j) & 1
            if ki != kj:
                key ^= bi | bj
            out[key] = val
        self.coeffs = out

    def gg(self, i, j):
        """G_i -> G_i G_j, D_j -> D_j D_i, s_i -> s_i + s_j."""
        self._check_row(i)
        self._check_row(j)
        if i == j:
            raise ValueError("GG needs distinct rows")
        t = self.tab
        t.gens[i] = multiply(t.gens[i], t.gens[j])
        t.destabs[j] = multiply(t.destabs[j], t.destabs[i])
        bi = 1 << i
        out = {}
        for key, val in self.coeffs.items():
            if (key >> j) & 1:
                key ^= bi
            out[key] = val
        self.coeffs = out

    def dg1(self, i):
        """D_i -> -i D_i G_i, and C_s -> i C_s when s_i = 1."""
        self._check_row(i)
        t = self.tab
        prod = multiply(t.destabs[i], t.gens[i])
        t.destabs[i] = PauliString(prod.n, prod.x, prod.z, prod.phase + 3)
        for key in self.coeffs:
            if (key >> i) & 1:
                self.coeffs[key] *= 1j

    def dg2(self, i, j):
        """D_i -> D_i G_j, D_j -> D_j G_i, C_s -> -C_s when s_i = s_j = 1."""
        self._check_row(i)
        self._check_row(j)
        if i == j:
            raise ValueError("DG2 needs distinct rows")
        t = self.tab
        t.destabs[i] = multiply(t.destabs[i], t.gens[j])
        t.destabs[j] = multiply(t.destabs[j], t.gens[i])
        mask = (1 << i) | (1 << j)
        for key in self.coeffs:
            if key & mask == mask:
                self.coeffs[key] = -self.coeffs[key]

    def canonical_move(self, move):
        """Dispatch ('swap', i, j) | ('GG', i, j) | ('DG1', i) | ('DG2', i, j)."""
        name = move[0].upper()
        if name == "SWAP":
            self.swap(move[1], move[2])
        elif name == "GG":
            self.gg(move[1], move[2])
        elif name == "DG1":
            self.dg1(move[1])
        elif name == "DG2":
            self.dg2(move[1], move[2])
        else:
            raise ValueError("unknown canonical move %r" % (move[0],))

    def _check_row(self, i):
        if not 0 <= i < self.n:
            raise IndexError("row %d out of range" % i)

    # ------------------------------------------------------------------
    # Clifford / Pauli fast paths.
    # ------------------------------------------------------------------

    def apply_clifford(self, gate, targets):
        """Conjugate the tableau; coefficients are untouched."""
        u = gate_map(gate) if isinstance(gate, str) else gate
        idx = [self.axis(t) for t in targets]
        if len(idx) != u.k:
            raise ValueError("target count must match gate arity")
        if u.k == 1:
            self._conjugate_rows_1q(u, idx[0])
            return
        if u.k == 2:
            self._conjugate_rows_2q(u, idx[0], idx[1])
            return
        t = self.tab
        for r in range(self.n):
            t.gens[r] = conjugate_pauli(t.gens[r], u, idx)
            t.destabs[r] = conjugate_pauli(t.destabs[r], u, idx)

    def _conjugate_rows_1q(self, u, q):
        # Table-driven conjugation: per-row work is a handful of shifts,
        # and rows without support on the target are left untouched.
        lut = _clifford_lut(u)
        n = self.n
        bit = 1 << q
        for rows in (self.tab.gens, self.tab.destabs):
            for r in range(n):
                p = rows[r]
                key = ((p.x >> q) & 1) | (((p.z >> q) & 1) << 1)
                if not key:
                    continue
                xo, zo, dph = lut[key]
                rows[r] = PauliString(
                    n,
                    (p.x & ~bit) | (xo << q),
                    (p.z & ~bit) | (zo << q),
                    p.phase + dph,
                )

    def _conjugate_rows_2q(self, u, a, b):
        lut = _clifford_lut(u)
        n = self.n
        abit, bbit = 1 << a, 1 << b
        clear = ~(abit | bbit)
        for rows in (self.tab.gens, self.tab.destabs):
            for r in range(n):
                p = rows[r]
                key = (((p.x >> a) & 1) | (((p.x >> b) & 1) << 1)
                       | (((p.z >> a) & 1) << 2) | (((p.z >> b) & 1) << 3))
                if not key:
                    continue
                xo, zo, dph = lut[key]
                rows[r] = PauliString(
                    n,
                    (p.x & clear) | ((xo & 1) << a) | ((xo >> 1) << b),
                    (p.z & clear) | ((zo & 1) << a) | ((zo >> 1) << b),
                    p.phase + dph,
                )

    def apply_pauli(self, p: PauliString):
        """Apply a Pauli operator: rows anticommuting with it flip sign."""
        if p.n != self.n:
            raise ValueError("operator size mismatch")
        t = self.tab
        for r in range(self.n):
            if not commutes(p, t.gens[r]):
                t.gens[r] = t.gens[r].negate()
            if not commutes(p, t.destabs[r]):
                t.destabs[r] = t.destabs[r].negate()

    def apply_pauli_linear(self, c0, c1, p: PauliString):
        """Apply the unitary c0*I + c1*P without any basis reduction.

        Writing P = sign * G^g D^d over the tableau, P maps the key s to
        s^d with a sign fixed by commutation parities, so the coefficient
        table doubles at worst and the tableau itself never changes.
        Requires Hermitian P and |c0|^2+|c1|^2 = 1, Re(c0 conj c1) = 0,
        which makes c0*I + c1*P unitary.
        """
        if p.n != self.n:
            raise ValueError("operator size mismatch")
        if not p.is_hermitian():
            raise ValueError("P must be Hermitian")
        c0 = complex(c0)
        c1 = complex(c1)
        if (abs(abs(c0) ** 2 + abs(c1) ** 2 - 1.0) > 1e-10
                or abs((c0.conjugate() * c1).real) > 1e-10):
            raise ValueError("c0*I + c1*P is not unitary")
        if abs(c1) < 1e-15:
            return
        t = self.tab
        g = d = 0
        for r in range(self.n):
            if not commutes(p, t.gens[r]):
                d |= 1 << r
            if not commutes(p, t.destabs[r]):
                g |= 1 << r
        acc = PauliString(self.n)
        for r in range(self.n):
            if (g >> r) & 1:
                acc = multiply(acc, t.gens[r])
        for r in range(self.n):
            if (d >> r) & 1:
                acc = multiply(acc, t.destabs[r])
        if acc.x != p.x or acc.z != p.z:
            raise AssertionError("tableau decomposition of P failed")
        # P = i^rel * G^g D^d; rel is odd exactly when the two ordered
        # factors anticommute (|g&d| odd) and the product is skew.
        rel = (p.phase - acc.phase) & 3
        base = c1 * (1j ** rel)
        # Commuting G^g past D^d costs one sign per overlapping row.
        if (g & d).bit_count() & 1:
            base = -base
        out = {}
        for s, val in self.coeffs.items():
            out[s] = out.get(s, 0.0) + c0 * val
            amp = base * val
            if (s & g).bit_count() & 1:
                amp = -amp
            key = s ^ d
            out[key] = out.get(key, 0.0) + amp
        # Exact cancellations appear whenever P stabilizes the state.
        self.coeffs = {k: v for k, v in out.items() if v != 0}
        self.trim()

    def apply_one_qubit_unitary(self, label, mat):
        """Apply a 2x2 unitary, routing axis rotations past the CLE path.

        Any single-qubit unitary splits as c0*I + cX*X + cY*Y + cZ*Z; when
        only one Pauli coefficient survives (every R_x/R_y/R_z and phase
        gate) the direct coefficient map applies, otherwise the generic
        channel machinery takes over.
        """
        mat = np.asarray(mat, dtype=complex)
        if mat.shape != (2, 2):
            raise ValueError("expected a 2x2 matrix")
        comps = {
            "X": (mat[0, 1] + mat[1, 0]) / 2.0,
            "Y": (mat[0, 1] - mat[1, 0]) * 1j / 2.0,
            "Z": (mat[0, 0] - mat[1, 1]) / 2.0,
        }
        live = [(ltr, c) for ltr, c in comps.items() if abs(c) > 1e-14]
        c0 = (mat[0, 0] + mat[1, 1]) / 2.0
        if not live:
            return 0
        if len(live) == 1:
            letter, c1 = live[0]
            q = self.axis(label)
            self.apply_pauli_linear(c0, c1, PauliString.single(self.n, q, letter))
            return 0
        return self.apply_channel([label], [mat], None, forced=0)

    def apply_pauli_channel(self, channel, rng, forced=None):
        """Sample one Pauli from [(prob, PauliString), ...] and apply it."""
        total = 0.0
        for prob, _ in channel:
            if prob < 0:
                raise ValueError("negative probability")
            total += prob
        if abs(total - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")
        if forced is None:
            u = rng.random() * total
            acc = 0.0
            forced = len(channel) - 1
            for idx, (prob, _) in enumerate(channel):
                acc += prob
                if u < acc:
                    forced = idx
                    break
        self.apply_pauli(channel[forced][1])
        return forced

    # ------------------------------------------------------------------
    # Measurement.
    # ------------------------------------------------------------------

    def measure_pauli(self, target: PauliString, rng, forced=None, max_weight=None):
        """Keep-mode projective measurement of a Hermitian Pauli.

        Returns the outcome bit (0 for +1, 1 for -1).  The rank never
        grows: branches merge pairwise in the random case and are
        filtered in the deterministic case.
        """
        if target.n != self.n:
            raise ValueError("operator size mismatch")
        if not target.is_hermitian():
            raise ValueError("measurement target must be Hermitian")
        if max_weight is not None and target.weight > max_weight:
            raise ValueError(
                "measurement support %d exceeds limit %d" % (target.weight, max_weight)
            )
        if target.is_identity():
            return 0 if target.phase == 0 else 1
        anti = [r for r in range(self.n) if not commutes(self.tab.gens[r], target)]
        if anti:
            istar = self._normalize_anticommuting(target, anti)
            return self._project_random(target, istar, rng, forced)
        return self._project_deterministic(target, rng, forced)

    def _normalize_anticommuting(self, target, anti):
        """Canonical moves until target equals +-D_istar exactly."""
        istar = anti[0]
        for r in anti[1:]:
            self.gg(r, istar)
        for r in range(self.n):
            if r != istar and not commutes(self.tab.destabs[r], target):
                self.dg2(r, istar)
        if not commutes(self.tab.destabs[istar], target):
            self.dg1(istar)
        dst = self.tab.destabs[istar]
        if dst.x != target.x or dst.z != target.z:
            raise AssertionError("destabilizer realization failed")
        return istar

    def _project_random(self, target, istar, rng, forced):
        dst = self.tab.destabs[istar]
        eps_sign = 1 if dst.phase == target.phase else -1
        bit = 1 << istar
        merged = {}
        for key, val in self.coeffs.items():
            base = key & ~bit
            slot = merged.setdefault(base, [0j, 0j])
            slot[(key >> istar) & 1] = val
        norm = self.norm_sq()
        plus_num = 0.0
        minus_num = 0.0
        for c0, c1 in merged.values():
            plus_num += abs(c0 + eps_sign * c1) ** 2 / 2.0
            minus_num += abs(c0 - eps_sign * c1) ** 2 / 2.0
        if forced is None:
            outcome = 0 if rng.random() * norm < plus_num else 1
        else:
            outcome = forced
        b_sign = 1 if outcome == 0 else -1
        num = plus_num if outcome == 0 else minus_num
        if num <= 0:
            raise ValueError("forced outcome has zero probability")
        scale = 1.0 / math.sqrt(2.0 * num)
        out = {}
        for base, (c0, c1) in merged.items():
            val = (c0 + b_sign * eps_sign * c1) * scale
            if abs(val) > 1e-14:
                out[base] = val
        self.coeffs = out
        old_gen = self.tab.gens[istar]
        new_gen = dst if b_sign * eps_sign > 0 else dst.negate()
        self.tab.gens[istar] = new_gen
        self.tab.destabs[istar] = old_gen
        return outcome

    def _project_deterministic(self, target, rng, forced):
        jmask = 0
        for r in range(self.n):
            if not commutes(self.tab.destabs[r], target):
                jmask |= 1 << r
        if jmask == 0:
            raise AssertionError("nontrivial operator commutes with every row")
        prod = PauliString(self.n)
        r = 0
        mask = jmask
        while mask:
            if mask & 1:
                prod = multiply(prod, self.tab.gens[r])
            mask >>= 1
            r += 1
        if prod.x != target.x or prod.z != target.z:
            raise AssertionError("measured operator not in the stabilizer group")
        sigma = 1 if prod.phase == target.phase else -1
        norm = self.norm_sq()
        minus_num = 0.0
        for key, val in self.coeffs.items():
            eig = sigma * (1 if (key & jmask).bit_count() % 2 == 0 else -1)
            if eig < 0:
                minus_num += (val * val.conjugate()).real
        if forced is None:
            outcome = 1 if rng.random() * norm < minus_num else 0
        else:
            outcome = forced
        want = -1 if outcome == 1 else 1
        num = minus_num if outcome == 1 else norm - minus_num
        if num <= 0:
            raise ValueError("forced outcome has zero probability")
        scale = 1.0 / math.sqrt(num)
        out = {}
        for key, val in self.coeffs.items():
            eig = sigma * (1 if (key & jmask).bit_count() % 2 == 0 else -1)
            if eig == want:
                out[key] = val * scale
        self.coeffs = out
        return outcome

    def measure_qubit(self, label, rng, basis="Z", forced=None):
        q = self.axis(label)
        return self.measure_pauli(
            PauliString.single(self.n, q, basis), rng, forced=forced
        )

    def destructive_measure(self, label, rng, basis="Z", forced=None):
        """Measure one qubit and remove it from the register."""
        if self.n == 1:
            raise ValueError("cannot remove the last qubit")
        q = self.axis(label)
        target = PauliString.single(self.n, q, basis)
        anti = [r for r in range(self.n) if not commutes(self.tab.gens[r], target)]
        if anti:
            istar = self._normalize_anticommuting(target, anti)
            outcome = self._project_random(target, istar, rng, forced)
        else:
            outcome = self._project_deterministic(target, rng, forced)
            jrows = [
                r
                for r in range(self.n)
                if not commutes(self.tab.destabs[r], target)
            ]
            istar = jrows[0]
            for r in jrows[1:]:
                self.gg(istar, r)
            # All surviving keys share the folded parity bit.
            bits = {(key >> istar) & 1 for key in self.coeffs}
            if len(bits) != 1:
                raise AssertionError("folded syndrome bit is not constant")
            if bits.pop():
                self.tab.gens[istar] = self.tab.gens[istar].negate()
                self.coeffs = {key & ~(1 << istar): val for key, val in self.coeffs.items()}
        gen = self.tab.gens[istar]
        if gen.x != target.x or gen.z != target.z:
            raise AssertionError("measured qubit generator is not localized")
        # Clear the measured qubit from every other row, then drop it.
        for r in range(self.n):
            if r == istar:
                continue
            if (self.tab.gens[r].x >> q) & 1 or (self.tab.gens[r].z >> q) & 1:
                self.gg(r, istar)
            if (self.tab.destabs[r].x >> q) & 1 or (self.tab.destabs[r].z >> q) & 1:
                self.dg2(r, istar)
        self._drop_row_and_qubit(istar, q)
        return outcome

    def _drop_row_and_qubit(self, row, q):
        n = self.n
        low = (1 << q) - 1
        keep_rows = [r for r in range(n) if r != row]
        new_gens = []
        new_destabs = []
        for r in keep_rows:
            g = self.tab.gens[r]
            d = self.tab.destabs[r]
            if ((g.x | g.z) >> q) & 1 or ((d.x | d.z) >> q) & 1:
                raise AssertionError("row still supported on dropped qubit")
            new_gens.append(self._strip_qubit(g, q, low))
            new_destabs.append(self._strip_qubit(d, q, low))
        rowbit = 1 << row
        rowlow = rowbit - 1
        out = {}
        for key, val in self.coeffs.items():
            if key & rowbit:
                raise AssertionError("dropped row appears in a syndrome key")
            out[(key & rowlow) | ((key >> 1) & ~rowlow)] = val
        self.tab = Tableau(new_gens, new_destabs)
        self.coeffs = out
        del self.labels[q]

    @staticmethod
    def _strip_qubit(p: PauliString, q: int, low: int) -> PauliString:
        x = (p.x & low) | ((p.x >> 1) & ~low)
        z = (p.z & low) | ((p.z >> 1) & ~low)
        return PauliString(p.n - 1, x, z, p.phase)

    def creative_reset(self, basis="Z", label=None):
        """Append a fresh qubit in |0> (Z) or |+> (X) as a new register slot."""
        n = self.n
        if label is None:
            label = max((l for l in self.labels if isinstance(l, int)), default=-1) + 1
        if label in self.labels:
            raise ValueError("label %r already live" % (label,))
        gens = [PauliString(n + 1, p.x, p.z, p.phase) for p in self.tab.gens]
        destabs = [PauliString(n + 1, p.x, p.z, p.phase) for p in self.tab.destabs]
        gen_letter = "Z" if basis == "Z" else "X"
        destab_letter = "X" if basis == "Z" else "Z"
        gens.append(PauliString.single(n + 1, n, gen_letter))
        destabs.append(PauliString.single(n + 1, n, destab_letter))
        self.tab = Tableau(gens, destabs)
        self.labels.append(label)
        return label

    # ------------------------------------------------------------------
    # Trimming.
    # ------------------------------------------------------------------

    def trim(self):
        """Drop sub-eps coefficients, enforce m_max, renormalize."""
        items = [(k, v) for k, v in self.coeffs.items() if abs(v) >= self.eps]
        if len(items) > self.m_max:
            items.sort(key=lambda kv: abs(kv[1]), reverse=True)
            items = items[: self.m_max]
        if not items:
            raise ValueError("all coefficients trimmed; state annihilated")
        kept = sum(abs(v) ** 2 for _, v in items)
        total = self.norm_sq()
        self.discarded += max(total - kept, 0.0)
        scale = 1.0 / math.sqrt(kept)
        self.coeffs = {k: v * scale for k, v in items}
        return self

    # ------------------------------------------------------------------
    # CLE reduction.
    # ------------------------------------------------------------------

    def reduce_cle(self, A_labels):
        """Bring the tableau to canonical local entanglement form on A.

        Only canonical moves touch the tableau, so the represented
        state is unchanged.  Returns a CleForm; afterwards rows 0..k-1
        carry the single-qubit destabilizers of the qubits of A in
        ascending order and rows k..k+p-1 the entangled partners.

        Valid destabilizer letters are globally coupled through the
        punctured generator span, so a greedy per-column choice can
        dead-end.  The letters are therefore fixed up front: partner
        letters are single-letter vectors lying inside the span but
        independent of its radical, and the remaining columns get
        letters from a Gaussian split of the projected radical.  The
        generator rows are then recombined into the dual basis of that
        letter set, the destabilizers realized column by column, and
        leftover destabilizer support on A cleared with forced moves.
        """
        if not A_labels:
            raise ValueError("qubit set must be nonempty")
        idx = sorted(self.axis(l) for l in A_labels)
        if len(set(idx)) != len(idx):
            raise ValueError("duplicate qubits in A")
        k = len(idx)
        act = self._cle_echelon(idx)
        rad = self._cle_hyperbolic(idx, act)
        p = (len(act) - len(rad)) // 2
        if len(act) != k + p or len(rad) != k - p:
            raise AssertionError("punctured rank inconsistent with radical")
        lams = self._cle_pivot_letters(idx, act, rad, p)
        pivot_cols = [c for c, _ in lams]
        letters = self._cle_rest_letters(idx, rad, pivot_cols)
        for c, vec in lams:
            letters[c] = vec
        self._cle_realize_rows(idx, act, rad, lams, letters)
        self._cle_clear_complement(idx, act, set(pivot_cols))
        for c, q in enumerate(idx):
            code = ((letters[c] >> (k + c)) & 1) | (((letters[c] >> c) & 1) << 1)
            target = self._cle_letter(_CODE_KIND[code], q)
            anti = [
                r
                for r in range(self.n)
                if not commutes(self.tab.gens[r], target)
            ]
            if anti != [act[c]]:
                raise AssertionError("dual basis pairing broken")
            self._cle_realize_one(q, act[c], target)
        self._cle_clean_dirt(idx, act, pivot_cols)
        return self._cle_slot(idx, act, pivot_cols)

    def _cle_letter(self, kind, q):
        return PauliString.single(self.n, q, kind)

    def _cle_realize_one(self, q, istar, target):
        """Force D_istar == +-target using GG/DG2/DG1 moves only.

        After the sweeps every generator except G_istar and every
        destabilizer commutes with target, so expanding target in the
        symplectic row basis leaves exactly D_istar; equality is
        guaranteed and the final check is a tripwire.
        """
        for r in range(self.n):
            if r != istar and not commutes(self.tab.gens[r], target):
                self.gg(r, istar)
        for r in range(self.n):
            if r != istar and not commutes(self.tab.destabs[r], target):
                self.dg2(r, istar)
        if not commutes(self.tab.destabs[istar], target):
            self.dg1(istar)
        dst = self.tab.destabs[istar]
        if dst.x != target.x or dst.z != target.z:
            raise AssertionError("CLE destabilizer realization failed")

    def _punctured(self, p, idx):
        x = z = 0
        for i, q in enumerate(idx):
            x |= ((p.x >> q) & 1) << i
            z |= ((p.z >> q) & 1) << i
        return x, z

    def _punctured_vec(self, r, idx):
        x, z = self._punctured(self.tab.gens[r], idx)
        return (x << len(idx)) | z

    def _cle_echelon(self, idx):
        """Row-echelon the punctured generator matrix with GG moves.

        Returns the rows left holding independent punctured vectors;
        every other generator row comes out with no support on A.
        """
        pivots = {}
        act = []
        for r in range(self.n):
            while True:
                vec = self._punctured_vec(r, idx)
                if not vec:
                    break
                lead = vec.bit_length() - 1
                if lead not in pivots:
                    pivots[lead] = r
                    act.append(r)
                    break
                self.gg(r, pivots[lead])
        return act

    def _cle_hyperbolic(self, idx, act):
        """Split the active rows into hyperbolic pairs plus the radical.

        Symplectic Gram-Schmidt over GG moves: anticommuting punctured
        pairs are extracted one at a time and every remaining row is
        made to commute with both members.  Returns the radical rows,
        whose punctured vectors commute with the whole span.
        """
        k = len(idx)
        todo = list(act)
        while True:
            pick = None
            for i, a in enumerate(todo):
                va = self._punctured_vec(a, idx)
                for b in todo[i + 1 :]:
                    if _sym(va, self._punctured_vec(b, idx), k):
                        pick = (a, b)
                        break
                if pick:
                    break
            if pick is None:
                return todo
            a, b = pick
            todo.remove(a)
            todo.remove(b)
            for r in todo:
                # gg(r, a) leaves the pairing with a unchanged, so the
                # two fixups do not interfere.
                if _sym(self._punctured_vec(r, idx), self._punctured_vec(b, idx), k):
                    self.gg(r, a)
                if _sym(self._punctured_vec(r, idx), self._punctured_vec(a, idx), k):
                    self.gg(r, b)

    def _cle_pivot_letters(self, idx, act, rad, p):
        """Choose the partner letters, one single-letter vector per pivot.

        Column-ascending depth-first search over letters Z, X, Y for p
        vectors that lie inside the punctured span and stay jointly
        independent of the radical.  The canonical form exists and its
        partner letters satisfy exactly these constraints, so the
        search cannot fail; it only makes the choice deterministic.
        """
        k = len(idx)
        span = {}
        for r in act:
            _f2_insert(span, self._punctured_vec(r, idx))
        seed = {}
        for r in rad:
            _f2_insert(seed, self._punctured_vec(r, idx))

        def grow(col, picked, basis):
            if len(picked) == p:
                return picked
            if k - col < p - len(picked):
                return None
            for vec in (1 << col, 1 << (k + col), (1 << col) | (1 << (k + col))):
                if not _f2_member(span, vec):
                    continue
                trial = dict(basis)
                if not _f2_insert(trial, vec):
                    continue
                got = grow(col + 1, picked + [(col, vec)], trial)
                if got is not None:
                    return got
            return grow(col + 1, picked, basis)

        got = grow(0, [], seed)
        if got is None:
            raise AssertionError("no compatible partner letters")
        return got

    def _cle_rest_letters(self, idx, rad, pivot_cols):
        """Letters for the non-pivot columns from the projected radical.

        The radical projects injectively onto the non-pivot columns.
        Columns where the projected X block has a pivot take letter Z;
        the leftover rows are Z-only with full rank on the remaining
        columns, which take letter X.  Letters chosen this way cannot
        multiply into the radical, which the dual-basis step needs.
        """
        k = len(idx)
        taken = set(pivot_cols)
        rest = [c for c in range(k) if c not in taken]
        m = len(rest)
        proj = []
        for r in rad:
            v = self._punctured_vec(r, idx)
            x = z = 0
            for i, c in enumerate(rest):
                x |= ((v >> (k + c)) & 1) << i
                z |= ((v >> c) & 1) << i
            proj.append((x << m) | z)
        xbasis = {}
        leftover = []
        for v in proj:
            while True:
                xs = v >> m
                if not xs:
                    leftover.append(v)
                    break
                c = xs.bit_length() - 1
                if c in xbasis:
                    v ^= xbasis[c]
                else:
                    xbasis[c] = v
                    break
        zmask = 0
        for c in range(m):
            if c not in xbasis:
                zmask |= 1 << c
        zbasis = {}
        for v in leftover:
            while True:
                vz = v & zmask
                if not vz:
                    raise AssertionError("projected radical is degenerate")
                c = vz.bit_length() - 1
                if c in zbasis:
                    v ^= zbasis[c]
                else:
                    zbasis[c] = v
                    break
        letters = {}
        for c in xbasis:
            letters[rest[c]] = 1 << rest[c]
        for c in zbasis:
            letters[rest[c]] = 1 << (k + rest[c])
        if len(letters) != m:
            raise AssertionError("non-pivot letter split incomplete")
        return letters

    def _cle_mu_vectors(self, idx, act, lams):
        """Span vectors pairing one-on-one with the partner letters.

        mu_j anticommutes with lams[j] alone and the mus pairwise
        commute, so together with the radical they span a maximal
        commuting subspace of the punctured span.
        """
        k = len(idx)
        vecs = [self._punctured_vec(r, idx) for r in act]
        pairing = []
        for v in vecs:
            bits = 0
            for j, (_, lam) in enumerate(lams):
                bits |= _sym(v, lam, k) << j
            pairing.append(bits)
        mus = []
        for j in range(len(lams)):
            mask = _f2_solve(pairing, 1 << j)
            if mask is None:
                raise AssertionError("partner letter pairing is degenerate")
            u = 0
            for i, v in enumerate(vecs):
                if (mask >> i) & 1:
                    u ^= v
            # Adding lam_i toggles only the pairing with mu_i.
            for i, mu in enumerate(mus):
                if _sym(u, mu, k):
                    u ^= lams[i][1]
            mus.append(u)
        return mus

    def _cle_realize_rows(self, idx, act, rad, lams, letters):
        """Recombine the active rows into dual-basis plus partner form.

        Row act[c] (c < k) receives the unique vector of the commuting
        subspace that anticommutes with the letter of column c alone;
        row act[k+j] receives partner letter j.  The change of basis
        is solved over F2 and replayed as GG moves.
        """
        k = len(idx)
        mus = self._cle_mu_vectors(idx, act, lams)
        vbasis = [self._punctured_vec(r, idx) for r in rad] + mus
        bmat = []
        for v in vbasis:
            row = 0
            for c in range(k):
                row |= _sym(v, letters[c], k) << c
            bmat.append(row)
        inv = _f2_inverse(bmat)
        targets = []
        for c in range(k):
            g = 0
            for i in range(k):
                if (inv[c] >> i) & 1:
                    g ^= vbasis[i]
            targets.append(g)
        targets += [vec for _, vec in lams]
        cur = [self._punctured_vec(r, idx) for r in act]
        smat = []
        for t in targets:
            mask = _f2_solve(cur, t)
            if mask is None:
                raise AssertionError("CLE target outside punctured span")
            smat.append(mask)
        for i, j in reversed(_f2_factor_ops(smat)):
            self.gg(act[i], act[j])
        for i, t in enumerate(targets):
            if self._punctured_vec(act[i], idx) != t:
                raise AssertionError("row recombination missed its target")

    def _cle_clear_complement(self, idx, act, pivot_cols):
        """Strip complement support from the non-pivot pair rows.

        Rows without A support generate the complement-only subgroup;
        a non-pivot row carries a radical vector, so multiplying that
        subgroup in brings the row to A-only form.
        """
        n = self.n
        amask = 0
        for q in idx:
            amask |= 1 << q
        inact = [r for r in range(n) if r not in set(act)]
        basis = {}
        for r in inact:
            while True:
                g = self.tab.gens[r]
                vec = (g.x << n) | g.z
                if not vec:
                    raise AssertionError("identity generator row")
                lead = vec.bit_length() - 1
                if lead in basis:
                    self.gg(r, basis[lead])
                else:
                    basis[lead] = r
                    break
        for c in range(len(idx)):
            if c in pivot_cols:
                continue
            r = act[c]
            while True:
                g = self.tab.gens[r]
                vec = ((g.x & ~amask) << n) | (g.z & ~amask)
                if not vec:
                    break
                lead = vec.bit_length() - 1
                if lead not in basis:
                    raise AssertionError("non-pivot row complement not clearable")
                self.gg(r, basis[lead])

    def _cle_clean_dirt(self, idx, act, pivot_cols):
        """Clear destabilizer support on A outside the first k rows.

        Commutation with the realized single-letter destabilizers
        confines the leftover support to pivot columns with matching
        letters.  Partner rows are cleaned with DG1/DG2, whose own
        generators carry exactly the needed letters; rows without A
        support are cleaned by GG against the pivot pair rows, which
        tolerate the complement-side growth.
        """
        k = len(idx)
        p = len(pivot_cols)
        amask = 0
        for q in idx:
            amask |= 1 << q
        slot_of = {c: j for j, c in enumerate(pivot_cols)}
        dirt = []
        for j in range(p):
            d = self.tab.destabs[act[k + j]]
            cols = set()
            for c in range(k):
                code = _letter_code(d, idx[c])
                if not code:
                    continue
                ok = c in slot_of and code == _letter_code(
                    self.tab.destabs[act[c]], idx[c]
                )
                if not ok:
                    raise AssertionError("partner destabilizer dirt misplaced")
                cols.add(slot_of[c])
            dirt.append(cols)
        for j in range(p):
            if j in dirt[j]:
                self.dg1(act[k + j])
                dirt[j].discard(j)
        for i in range(p):
            for j in range(i + 1, p):
                if (j in dirt[i]) != (i in dirt[j]):
                    raise AssertionError("partner destabilizer dirt asymmetric")
                if j in dirt[i]:
                    self.dg2(act[k + i], act[k + j])
        for j in range(p):
            d = self.tab.destabs[act[k + j]]
            if (d.x | d.z) & amask:
                raise AssertionError("partner destabilizer still touches A")
        actset = set(act)
        for r in range(self.n):
            if r in actset:
                continue
            d = self.tab.destabs[r]
            if not ((d.x | d.z) & amask):
                continue
            for c in pivot_cols:
                if _letter_code(self.tab.destabs[r], idx[c]):
                    self.gg(act[c], r)
            d = self.tab.destabs[r]
            if (d.x | d.z) & amask:
                raise AssertionError("destabilizer A-support not clearable")

    def _cle_slot(self, idx, act, pivot_cols):
        """Swap pair and partner rows into their canonical slots."""
        order = list(act)
        order += [r for r in range(self.n) if r not in set(act)]
        # Realize the permutation with swap moves.
        pos = list(range(self.n))
        where = {r: i for i, r in enumerate(pos)}
        for slot, want in enumerate(order):
            cur = where[want]
            if cur != slot:
                other = pos[slot]
                self.swap(slot, cur)
                pos[slot], pos[cur] = pos[cur], pos[slot]
                where[want] = slot
                where[other] = cur
        return CleForm(idx, len(idx), len(pivot_cols), tuple(pivot_cols))

    # ------------------------------------------------------------------
    # Local view and general channels.
    # ------------------------------------------------------------------

    def build_local(self, cle: CleForm):
        """Ancilla-dressed local tableau plus sector coefficient vectors."""
        if STRICT_CLE:
            validate_cle(self, cle)
        k, p = cle.k, cle.p
        nl = k + p
        n = self.n
        ext = n + p
        amask = 0
        for q in cle.A:
            amask |= 1 << q
        gens = []
        stored = []
        pivot_of = {cle.pivots[j]: j for j in range(p)}
        for i in range(k):
            g = self.tab.gens[i]
            loc = embed(puncture(g, cle.A), nl, list(range(k)))
            bx = g.x & ~amask
            bz = g.z & ~amask
            if i in pivot_of:
                j = pivot_of[i]
                loc = multiply(loc, PauliString.single(nl, k + j, "Z"))
                gens.append(loc)
                stored.append(
                    multiply(
                        PauliString(ext, bx, bz, 0),
                        PauliString.single(ext, n + j, "Z"),
                    )
                )
            else:
                if bx or bz:
                    raise AssertionError("non-pivot CLE row has complement support")
                gens.append(loc)
                stored.append(PauliString(ext))
        for j in range(p):
            g = self.tab.gens[k + j]
            loc = embed(puncture(g, cle.A), nl, list(range(k)))
            loc = multiply(loc, PauliString.single(nl, k + j, "X"))
            gens.append(loc)
            stored.append(
                multiply(
                    PauliString(ext, g.x & ~amask, g.z & ~amask, 0),
                    PauliString.single(ext, n + j, "X"),
                )
            )
        destabs = [
            embed(puncture(self.tab.destabs[i], cle.A), nl, list(range(k)))
            for i in range(k)
        ]
        # The partner destabilizer D_{k+j} equals sigma * b_j * s with
        # b_j the stored pivot complement part (phase 0 convention) and
        # s in the complement-only generator group; on the code space it
        # therefore acts as sigma times logical Z of ancilla j.  The
        # sign sigma is an invariant of the representation, so extract
        # it exactly and bake it into the local destabilizer.
        zrows = [self.tab.gens[r] for r in range(nl, n)]
        zvecs = [(g.x << n) | g.z for g in zrows]
        for j in range(p):
            g = self.tab.gens[cle.pivots[j]]
            bpart = PauliString(n, g.x & ~amask, g.z & ~amask, 0)
            u = multiply(self.tab.destabs[k + j], bpart)
            mask = _f2_solve(zvecs, (u.x << n) | u.z)
            if mask is None:
                raise AssertionError("partner destabilizer outside complement group")
            s = PauliString(n)
            for t, zg in enumerate(zrows):
                if (mask >> t) & 1:
                    s = multiply(s, zg)
            r = multiply(u, s)
            if r.x or r.z or r.phase % 2:
                raise AssertionError("partner destabilizer sign extraction failed")
            d_loc = PauliString.single(nl, k + j, "Z")
            if r.phase == 2:
                d_loc = d_loc.negate()
            destabs.append(d_loc)
        lmask = (1 << nl) - 1
        sectors = {}
        dim = 1 << nl
        for key, val in self.coeffs.items():
            vec = sectors.setdefault(key & ~lmask, np.zeros(dim, dtype=complex))
            vec[key & lmask] += val
        return LocalState(k, p, cle.A, n, gens, destabs, stored, sectors)

    def apply_channel(self, A_labels, kraus, rng, k_max=6, forced=None):
        """Trajectory application of a CPTP map on the qubits A_labels.

        Kraus operators are 2^k x 2^k little-endian matrices over the
        sorted qubits of A.  One branch is sampled with probability
        equal to its norm contribution, a fresh near-optimal local
        basis is selected, and the global tableau is rebuilt from the
        ancilla-dressed bookkeeping.  Returns the branch index.
        """
        if len(A_labels) > k_max:
            raise ValueError(
                "channel support %d exceeds k_max %d" % (len(A_labels), k_max)
            )
        dim_k = 1 << len(A_labels)
        acc = np.zeros((dim_k, dim_k), dtype=complex)
        for kr in kraus:
            kr = np.asarray(kr, dtype=complex)
            if kr.shape != (dim_k, dim_k):
                raise ValueError("Kraus operator has wrong shape")
            acc += kr.conj().T @ kr
        if not np.allclose(acc, np.eye(dim_k), atol=1e-10):
            raise ValueError("Kraus operators do not satisfy completeness")

        cle = self.reduce_cle(A_labels)
        k, p = cle.k, cle.p
        nl = k + p
        if nl > 12:
            raise RuntimeError("local register too large (k+p = %d)" % nl)
        loc = self.build_local(cle)
        basis = loc.basis_matrix()
        sector_keys = sorted(loc.sectors)
        psis = [basis @ loc.sectors[key] for key in sector_keys]

        total = sum(float(np.vdot(v, v).real) for v in psis)
        branch_weights = []
        branched = []
        for kr in kraus:
            kr = np.asarray(kr, dtype=complex)
            outs = [self._apply_on_low(kr, v, k, p) for v in psis]
            w = sum(float(np.vdot(v, v).real) for v in outs)
            branch_weights.append(w / total)
            branched.append(outs)
        if forced is None:
            u = rng.random()
            accw = 0.0
            forced = len(kraus) - 1
            for idx, w in enumerate(branch_weights):
                accw += w
                if u < accw:
                    forced = idx
                    break
        if branch_weights[forced] <= 0:
            raise ValueError("forced branch has zero probability")
        scale = 1.0 / math.sqrt(branch_weights[forced] * total)
        new_psis = [v * scale for v in branched[forced]]

        letters = self._select_basis(new_psis, nl)
        rot = np.array([[1]], dtype=complex)
        for q in range(nl - 1, -1, -1):
            rot = np.kron(rot, _BASIS_COLS[letters[q]])
        lmask = (1 << nl) - 1
        out = {}
        for key, psi in zip(sector_keys, new_psis):
            amps = rot.conj().T @ psi
            for s in range(1 << nl):
                val = complex(amps[s])
                if abs(val) > 1e-14:
                    out[key | s] = val
        self.coeffs = out
        self._rebuild_global(cle, letters)
        self.trim()
        return forced

    @staticmethod
    def _apply_on_low(kr, vec, k, p):
        mat = vec.reshape(1 << p, 1 << k)
        return (mat @ kr.T).reshape(-1)

    def _select_basis(self, psis, nl):
        """Greedy per-qubit eigenbasis choice minimizing coefficient count."""
        dominant = max(psis, key=lambda v: float(np.vdot(v, v).real))
        work = dominant.copy()
        thr = max(self.eps, 1e-14)
        letters = []
        for q in range(nl):
            best = None
            for cand in ("X", "Y", "Z"):
                rotated = self._rotate_axis(work, q, nl, cand)
                count = int(np.count_nonzero(np.abs(rotated) >= thr))
                peak = float(np.max(np.abs(rotated)))
                # earlier letters win ties so roundoff cannot flip the
                # preferred basis; a later letter must be strictly better
                if best is None:
                    best = (count, peak, cand, rotated)
                elif count < best[0] or (count == best[0] and peak > best[1] + 1e-12):
                    best = (count, peak, cand, rotated)
            letters.append(best[2])
            work = best[3]
        return letters

    @staticmethod
    def _rotate_axis(vec, q, nl, letter):
        u = _BASIS_COLS[letter].conj().T
        t = vec.reshape((2,) * nl)
        axis = nl - 1 - q
        t = np.moveaxis(t, axis, 0)
        t = np.tensordot(u, t, axes=(1, 0))
        t = np.moveaxis(t, 0, axis)
        return t.reshape(-1)

    def _rebuild_global(self, cle, letters):
        """Replace the first k+p tableau rows from the chosen local basis."""
        k, p = cle.k, cle.p
        nl = k + p
        n = self.n
        ext = n + p
        # The first k+p tableau rows are untouched by the coefficient
        # update, so the ancilla-dressed bookkeeping can be rebuilt
        # from the live tableau.
        amask = 0
        for q in cle.A:
            amask |= 1 << q
        stored_pivot = {}
        stored_partner = {}
        pivot_of = {cle.pivots[j]: j for j in range(p)}
        for i, j in pivot_of.items():
            g = self.tab.gens[i]
            stored_pivot[j] = multiply(
                PauliString(ext, g.x & ~amask, g.z & ~amask, 0),
                PauliString.single(ext, n + j, "Z"),
            )
        for j in range(p):
            g = self.tab.gens[k + j]
            stored_partner[j] = multiply(
                PauliString(ext, g.x & ~amask, g.z & ~amask, 0),
                PauliString.single(ext, n + j, "X"),
            )

        def globalize(local_letter_positions):
            """Single-letter local row -> global n-qubit row."""
            pos, letter = local_letter_positions
            if pos < k:
                acc = PauliString.single(ext, cle.A[pos], letter)
            else:
                acc = PauliString.single(ext, n + (pos - k), letter)
            xb = acc.x >> n
            zb = acc.z >> n
            for j in range(p):
                if (xb >> j) & 1:
                    acc = multiply(acc, stored_partner[j])
            for j in range(p):
                if (zb >> j) & 1:
                    acc = multiply(acc, stored_pivot[j])
            if (acc.x >> n) or (acc.z >> n):
                raise AssertionError("ancilla support failed to cancel")
            if pos >= k and letter == "Y":
                # Y at an ancilla slot: the product above yields
                # -i*(partner)*(pivot) but the dressed logical Y is
                # +i*(partner)*(pivot), so flip the sign
                acc = acc.negate()
            return PauliString(n, acc.x, acc.z, acc.phase)

        new_gens = list(self.tab.gens)
        new_destabs = list(self.tab.destabs)
        for pos in range(nl):
            letter = letters[pos]
            new_gens[pos] = globalize((pos, letter))
            new_destabs[pos] = globalize((pos, _PARTNER[letter]))
        self.tab = Tableau(new_gens, new_destabs)

    # ------------------------------------------------------------------
    # Dense bridge and diagnostics.
    # ------------------------------------------------------------------

    def to_dense(self, max_n=20):
        """Amplitude vector (qubit i = bit i) up to global phase."""
        n = self.n
        if n > max_n:
            raise ValueError("register too large for dense export")
        dim = 1 << n
        psi0 = None
        for seed in range(dim):
            cand = np.zeros(dim, dtype=complex)
            cand[seed] = 1.0
            for g in self.tab.gens:
                cand = (cand + _pauli_dense(g, n) @ cand) / 2.0
            norm = float(np.vdot(cand, cand).real)
            if norm > 1e-9:
                psi0 = cand / math.sqrt(norm)
                break
        if psi0 is None:
            raise RuntimeError("stabilizer projection failed")
        out = np.zeros(dim, dtype=complex)
        for key, val in self.coeffs.items():
            vec = psi0
            r = 0
            mask = key
            while mask:
                if mask & 1:
                    vec = _pauli_dense(self.tab.destabs[r], n) @ vec
                mask >>= 1
                r += 1
            out += val * vec
        return out

    def dump(self):
        lines = ["n=%d m=%d" % (self.n, self.m)]
        for i, (g, d) in enumerate(zip(self.tab.gens, self.tab.destabs)):
            lines.append("G%-3d %s" % (i, g.label()))
            lines.append("D%-3d %s" % (i, d.label()))
        for key in sorted(self.coeffs):
            lines.append(
                "C %s %r" % (format(key, "0%db" % self.n)[::-1], self.coeffs[key])
            )
        return "\n".join(lines)


def init_zero(n, labels=None, m_max=1000, eps=1e-4):
    """All-zeros computational state: G_i = Z_i, D_i = X_i, C = {0: 1}."""
    return RankedState.zero(n, labels=labels, m_max=m_max, eps=eps)


def validate_cle(st: RankedState, cle: CleForm):
    """Check every CLE postcondition; raises ValueError on violation."""
    k, p = cle.k, cle.p
    A = cle.A
    amask = 0
    for q in A:
        amask |= 1 << q
    st.tab.validate()
    for i in range(k):
        d = st.tab.destabs[i]
        if d.weight != 1 or not ((d.x | d.z) >> A[i]) & 1:
            raise ValueError("destabilizer %d is not a single-qubit row on A" % i)
    for r in range(k, st.n):
        d = st.tab.destabs[r]
        if (d.x | d.z) & amask:
            raise ValueError("destabilizer %d has support on A" % r)
    touching = [
        r for r in range(st.n) if (st.tab.gens[r].x | st.tab.gens[r].z) & amask
    ]
    if touching != list(range(k + p)):
        raise ValueError("generators touching A are not exactly the first k+p rows")
    punct = [puncture(st.tab.gens[r], A) for r in range(k + p)]
    for i in range(k):
        for j in range(i + 1, k):
            if not commutes(punct[i], punct[j]):
                raise ValueError("punctured generators %d,%d anticommute" % (i, j))
    for j in range(p):
        anti = [i for i in range(k) if not commutes(punct[k + j], punct[i])]
        if anti != [cle.pivots[j]]:
            raise ValueError("partner %d pivot pattern broken" % j)
    if list(cle.pivots) != sorted(set(cle.pivots)):
        raise ValueError("pivots are not strictly increasing")
    return True
