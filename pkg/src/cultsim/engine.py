"""Shot execution: drives a parsed circuit through a simulator backend.

The circuit text format stores non-Clifford operations as tagged identity
placeholders, so execution binds them to concrete rotations: ``I[T_gate]``
is the pi/4 Y-axis rotation, ``I[T_dagger_gate]`` / ``I[negative_T_gate]``
its inverse, and ``I[injection]`` the residual rotation Ry(theta - pi/2)
completing the Hadamard-prepared |+> into
|theta> = cos(theta/2)|0> + sin(theta/2)|1>.  ``I[echo]`` and
``I[conjugate]`` are decoupling / frame markers and execute as identities;
every other mnemonic runs literally whatever its tag.

Execution modes:

- keep (default): measurements project in place, resets project-and-correct.
- destructive: M/MX remove the measured qubit and R/RX create a fresh one,
  the form produced by the reordering optimizer.
- clifford_approx: tagged rotations are replaced by their quarter-turn
  Clifford squares, turning the whole circuit into a stabilizer circuit for
  exhaustive fault-propagation scans.

Randomness is drawn from one counter-based stream per shot keyed by
(seed, shot index), so any subset of shots reproduces bit-exactly in any
execution order.
"""

from __future__ import annotations

import math

import numpy as np

from . import densesim
from .circuit import CHANNEL, GATE1, GATE2, MEASURE, RESET, evaluate_records
from .pauli import PauliString, commutes, conjugate_pauli, gate_map
from .rrsim import RankedState

__all__ = [
    "CapacityError",
    "ShotResult",
    "run_shot",
    "shot_rng",
    "select_engine",
    "touched_qubits",
    "fault_sites",
    "propagate_fault",
    "ry",
    "GATE_MATS",
    "ROTATION_TAGS",
    "DENSE_CAP",
]

DENSE_CAP = 14

_S2 = 1.0 / math.sqrt(2.0)

GATE_MATS = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _S2,
    "H_YZ": np.array([[1, -1j], [1j, -1]], dtype=complex) * _S2,
    "S": np.diag([1, 1j]).astype(complex),
    "S_DAG": np.diag([1, -1j]).astype(complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
    # two-qubit matrices are little-endian with the first target on the
    # low bit, so CX rows read |t c> with c = control
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "CX": np.array(
        [[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex
    ),
}

ROTATION_TAGS = ("T_gate", "T_dagger_gate", "negative_T_gate", "injection")

# Ry(k pi/2) as sequences of registry gates (global phase free).
_QUARTER_TURNS = {0: (), 1: ("Z", "H"), 2: ("Y",), 3: ("H", "Z")}


class CapacityError(RuntimeError):
    """Simulation capacity exceeded (register size or coefficient cap)."""


def ry(theta: float) -> np.ndarray:
    """e^{-i theta Y / 2}; real rotation in the X/Z plane."""
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def shot_rng(seed: int, shot: int) -> np.random.Generator:
    """Counter-based per-shot stream; shots are independent and mergeable."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, shot & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def touched_qubits(circuit):
    """All qubit ids referenced by executable instructions."""
    out = set()
    for op in circuit.ops:
        if op.name == "MPP":
            for product in op.targets:
                out.update(q for _, q in product)
        elif op.name in GATE1 or op.name in GATE2 or op.name in MEASURE \
                or op.name in RESET or op.name in CHANNEL or op.name == "RZ":
            out.update(op.targets)
    return out


def select_engine(circuit, engine: str = "auto", cap: int = DENSE_CAP) -> str:
    if engine in ("dense", "ranked"):
        return engine
    if engine != "auto":
        raise ValueError("engine must be 'auto', 'dense', or 'ranked'")
    return "dense" if len(touched_qubits(circuit)) <= cap else "ranked"


def _rotation_angle(tag, theta):
    if tag == "T_gate":
        return math.pi / 4.0
    if tag in ("T_dagger_gate", "negative_T_gate"):
        return -math.pi / 4.0
    if tag == "injection":
        return theta - math.pi / 2.0
    return None


class _DenseBackend:
    name = "dense"

    def __init__(self, labels):
        self.st = densesim.DenseState.zero(sorted(labels))

    def gate(self, gate_name, targets):
        self.st = densesim.apply_unitary(self.st, GATE_MATS[gate_name], targets)

    def unitary(self, mat, targets):
        self.st = densesim.apply_unitary(self.st, mat, targets)

    def pauli(self, label, letter):
        p = PauliString.single(1, 0, letter)
        self.st = densesim.apply_pauli(self.st, p, [label])

    def pauli_terms(self, terms):
        for label, letter in terms:
            self.pauli(label, letter)

    def measure(self, label, basis, rng, forced=None):
        if basis == "X":
            k0 = np.array([[1, 1], [1, 1]], dtype=complex) / 2.0
            k1 = np.array([[1, -1], [-1, 1]], dtype=complex) / 2.0
        else:
            k0 = np.diag([1, 0]).astype(complex)
            k1 = np.diag([0, 1]).astype(complex)
        bit, self.st = densesim.apply_kraus(self.st, [k0, k1], [label], rng, branch=forced)
        return bit

    def measure_product(self, product, rng, forced=None):
        labels = [q for _, q in product]
        mat = np.array([[1.0]], dtype=complex)
        for letter, _ in reversed(product):
            mat = np.kron(mat, GATE_MATS[letter])
        dim = mat.shape[0]
        k0 = (np.eye(dim) + mat) / 2.0
        k1 = (np.eye(dim) - mat) / 2.0
        bit, self.st = densesim.apply_kraus(self.st, [k0, k1], labels, rng, branch=forced)
        return bit

    def reset(self, label, basis, rng, forced=None):
        bit = self.measure(label, basis, rng, forced=forced)
        if bit:
            self.pauli(label, "X" if basis == "Z" else "Z")
        return bit

    def destructive_measure(self, label, basis, rng, forced=None):
        bit, self.st = densesim.destructive_measure(self.st, label, basis, rng, outcome=forced)
        return bit

    def creative_reset(self, label, basis):
        self.st = densesim.creative_reset(self.st, label, basis)

    def diagnostics(self):
        return {"m_peak": 1, "discarded": 0.0}


class _RankedBackend:
    name = "ranked"

    # A permanent sentinel qubit keeps the register nonempty so that
    # destructive mode can start from nothing and empty out completely.
    _SENTINEL = "__sentinel__"

    def __init__(self, labels, m_max=1000, eps=1e-4, k_max=6):
        self.k_max = k_max
        self.m_peak = 1
        start = [self._SENTINEL] + sorted(labels)
        self.st = RankedState.zero(len(start), start, m_max=m_max, eps=eps)

    def _track(self):
        if self.st.m > self.m_peak:
            self.m_peak = self.st.m

    def gate(self, gate_name, targets):
        self.st.apply_clifford(gate_name, targets)

    def unitary(self, mat, targets):
        if len(targets) == 1:
            self.st.apply_one_qubit_unitary(targets[0], mat)
        else:
            self.st.apply_channel(targets, [np.asarray(mat, dtype=complex)],
                                  None, k_max=self.k_max, forced=0)
        self._track()

    def pauli(self, label, letter):
        q = self.st.axis(label)
        self.st.apply_pauli(PauliString.single(self.st.n, q, letter))

    def pauli_terms(self, terms):
        n = self.st.n
        x = z = 0
        for label, letter in terms:
            bit = 1 << self.st.axis(label)
            if letter in ("X", "Y"):
                x |= bit
            if letter in ("Z", "Y"):
                z |= bit
        self.st.apply_pauli(PauliString(n, x, z))

    def measure(self, label, basis, rng, forced=None):
        bit = self.st.measure_qubit(label, rng, basis=basis, forced=forced)
        self._track()
        return bit

    def measure_product(self, product, rng, forced=None):
        n = self.st.n
        x = z = 0
        for letter, q in product:
            bit = 1 << self.st.axis(q)
            if letter in ("X", "Y"):
                x |= bit
            if letter in ("Z", "Y"):
                z |= bit
        # (x, z) both set encodes the Hermitian Y directly; phase stays 0
        target = PauliString(n, x, z)
        bit = self.st.measure_pauli(target, rng, forced=forced, max_weight=self.k_max)
        self._track()
        return bit

    def reset(self, label, basis, rng, forced=None):
        bit = self.measure(label, basis, rng, forced=forced)
        if bit:
            self.pauli(label, "X" if basis == "Z" else "Z")
        return bit

    def destructive_measure(self, label, basis, rng, forced=None):
        bit = self.st.destructive_measure(label, rng, basis=basis, forced=forced)
        self._track()
        return bit

    def creative_reset(self, label, basis):
        self.st.creative_reset(basis=basis, label=label)

    def diagnostics(self):
        return {"m_peak": self.m_peak, "discarded": self.st.discarded}


class ShotResult:
    """Measurement record plus evaluated detectors/observables for one shot.

    ``branches`` lists every stochastic projection outcome in execution
    order (measurements plus in-place reset projections); feeding it back
    through ``forced`` replays the identical trajectory.
    """

    __slots__ = ("record", "detectors", "observables", "engine", "m_peak",
                 "discarded", "peak_live", "branches", "aborted", "state")

    def __init__(self, record, detectors, observables, engine, m_peak,
                 discarded, peak_live, branches, aborted=False):
        self.record = record
        self.detectors = detectors
        self.observables = observables
        self.engine = engine
        self.m_peak = m_peak
        self.discarded = discarded
        self.peak_live = peak_live
        self.branches = branches
        self.aborted = aborted

    @property
    def kept(self):
        return not self.aborted and not any(self.detectors)


# Uniform error alphabets: with total probability p one entry is drawn
# uniformly, matching p/3 per letter and p/15 per pair.
DEP1_LETTERS = ("X", "Y", "Z")
DEP2_LETTERS = tuple(
    (la, lb)
    for la in ("I", "X", "Y", "Z")
    for lb in ("I", "X", "Y", "Z")
    if (la, lb) != ("I", "I")
)


def run_shot(circuit, *, engine="auto", theta=math.pi / 4.0, seed=0, shot=0,
             rng=None, forced=None, clifford_approx=False, destructive=False,
             faults=None, m_max=1000, eps=1e-4, k_max=6, dense_cap=DENSE_CAP,
             keep_state=False, abort_on_detector=False):
    """Execute one trajectory and evaluate detectors/observables.

    ``forced`` optionally supplies branch outcomes (each entry 0/1) for
    every stochastic projection in execution order: measurements, and
    in keep mode the projective half of each reset.  ``faults`` maps an
    op index to [(qubit, letter), ...] Pauli errors injected right after
    that op.  ``abort_on_detector`` stops the shot at the first firing
    detector (the shot would be post-selected away), leaving later
    detectors/observables zeroed.  Returns a ShotResult (``.state``
    attached if requested).
    """
    chosen = select_engine(circuit, engine, cap=dense_cap)
    labels = touched_qubits(circuit)
    if rng is None:
        rng = shot_rng(seed, shot)
    if destructive:
        live = set()
        if chosen == "dense":
            backend = _DenseBackend([])
        else:
            backend = _RankedBackend([], m_max=m_max, eps=eps, k_max=k_max)
    else:
        live = set(labels)
        if chosen == "dense":
            backend = _DenseBackend(labels)
        else:
            backend = _RankedBackend(labels, m_max=m_max, eps=eps, k_max=k_max)

    forced_iter = iter(forced) if forced is not None else None

    def next_forced():
        if forced_iter is None:
            return None
        try:
            return int(next(forced_iter))
        except StopIteration:
            raise ValueError("forced outcome list exhausted") from None

    def check_live(targets):
        for q in targets:
            if q not in live:
                raise ValueError("operation on dead qubit %r" % (q,))

    record = []
    branches = []
    peak_live = len(live)
    theta = float(theta)
    aborted = False
    early = []

    for idx, op in enumerate(circuit.ops):
        name = op.name
        if name == "DT":
            if abort_on_detector:
                val = 0
                m = len(record)
                for off in op.targets:
                    val ^= record[m + off]
                early.append(val)
                if val:
                    aborted = True
                    break
        elif name in ("TICK", "OI", "MARKX", "MARKZ", "POLYGON"):
            pass
        elif name == "I":
            angle = _rotation_angle(op.tag, theta)
            if angle is not None:
                check_live(op.targets)
                if clifford_approx:
                    # Each pi/4 turn is promoted to its Clifford square;
                    # the injection residue must already be a quarter turn.
                    if op.tag == "injection":
                        k = angle / (math.pi / 2.0)
                        ik = int(round(k))
                        if abs(k - ik) > 1e-9:
                            raise ValueError(
                                "clifford approximation needs theta to be a"
                                " multiple of pi/2"
                            )
                        steps = _QUARTER_TURNS[ik % 4]
                    elif op.tag == "T_gate":
                        steps = _QUARTER_TURNS[1]
                    else:
                        steps = _QUARTER_TURNS[3]
                    for q in op.targets:
                        for step in steps:
                            backend.gate(step, [q])
                elif abs(math.remainder(angle, 2.0 * math.pi)) > 1e-12:
                    mat = ry(angle)
                    for q in op.targets:
                        backend.unitary(mat, [q])
        elif name in GATE1:
            check_live(op.targets)
            for q in op.targets:
                backend.gate(name, [q])
        elif name in GATE2:
            check_live(op.targets)
            for i in range(0, len(op.targets), 2):
                backend.gate(name, list(op.targets[i:i + 2]))
        elif name in MEASURE:
            basis = "X" if name == "MX" else "Z"
            check_live(op.targets)
            for q in op.targets:
                if destructive:
                    bit = backend.destructive_measure(q, basis, rng, forced=next_forced())
                    live.discard(q)
                else:
                    bit = backend.measure(q, basis, rng, forced=next_forced())
                record.append(bit)
                branches.append(bit)
        elif name in RESET:
            basis = "X" if name == "RX" else "Z"
            for q in op.targets:
                if q in live:
                    branches.append(backend.reset(q, basis, rng,
                                                  forced=next_forced()))
                else:
                    backend.creative_reset(q, basis)
                    live.add(q)
            if len(live) > peak_live:
                peak_live = len(live)
        elif name == "MPP":
            for product in op.targets:
                check_live(q for _, q in product)
                bit = backend.measure_product(list(product), rng,
                                              forced=next_forced())
                record.append(bit)
                branches.append(bit)
        elif name in CHANNEL:
            p = float(op.arg[0])
            if p > 0:
                check_live(op.targets)
                # u < p selects an error; u/p is then uniform again and
                # picks the letter, so each event costs one draw
                if name == "DEPOLARIZE2":
                    for i in range(0, len(op.targets), 2):
                        u = rng.random()
                        if u < p:
                            la, lb = DEP2_LETTERS[min(int(u / p * 15), 14)]
                            terms = []
                            if la != "I":
                                terms.append((op.targets[i], la))
                            if lb != "I":
                                terms.append((op.targets[i + 1], lb))
                            backend.pauli_terms(terms)
                elif name == "DEPOLARIZE1":
                    for q in op.targets:
                        u = rng.random()
                        if u < p:
                            letter = DEP1_LETTERS[min(int(u / p * 3), 2)]
                            backend.pauli_terms([(q, letter)])
                else:
                    letter = name[0]
                    for q in op.targets:
                        if rng.random() < p:
                            backend.pauli_terms([(q, letter)])
        elif name == "RZ":
            check_live(op.targets)
            mat = densesim.rz(float(op.arg[0]))
            for q in op.targets:
                backend.unitary(mat, [q])
        else:
            raise ValueError("cannot execute instruction %r" % (name,))

        if faults and idx in faults:
            for q, letter in faults[idx]:
                backend.pauli(q, letter)

    if aborted:
        detectors = early + [0] * (len(circuit.detectors) - len(early))
        observables = [0] * len(circuit.observables)
    else:
        detectors, observables = evaluate_records(circuit, record)
    diag = backend.diagnostics()
    result = ShotResult(record, detectors, observables, chosen,
                        diag["m_peak"], diag["discarded"], peak_live,
                        branches, aborted)
    if keep_state:
        result.state = backend.st
    return result


def fault_sites(circuit):
    """All (op index, qubit) pairs where a single fault can be injected.

    A fault lands immediately after the op on one of its target qubits,
    which covers state preparation (after resets), gate errors, idle
    tags, and readout-adjacent errors (after the projection).
    """
    sites = []
    for idx, op in enumerate(circuit.ops):
        name = op.name
        if name == "MPP":
            qs = sorted({q for product in op.targets for _, q in product})
        elif name == "I" or name in GATE1 or name in GATE2 \
                or name in MEASURE or name in RESET:
            qs = sorted(set(op.targets))
        else:
            continue
        sites.extend((idx, q) for q in qs)
    return sites


def propagate_fault(circuit, site, letter, *, theta=math.pi / 2.0,
                    clifford_approx=True):
    """Detector/observable flips caused by one Pauli fault.

    Propagates the Pauli frame difference between the faulty and the
    fault-free world through the circuit; each measurement bit flips
    exactly when the accumulated frame anticommutes with the measured
    operator, independently of any intrinsic measurement randomness.
    Only stabilizer circuits qualify, so tagged rotations must reduce
    to quarter turns.  Returns (detector_flips, observable_flips).
    """
    order = sorted(touched_qubits(circuit))
    axis = {q: i for i, q in enumerate(order)}
    n = len(order)
    frame = PauliString(n)
    fault_idx, fault_q = site
    flips = []

    for idx, op in enumerate(circuit.ops):
        name = op.name
        if name in ("TICK", "DT", "OI", "MARKX", "MARKZ", "POLYGON"):
            pass
        elif name == "I":
            angle = _rotation_angle(op.tag, theta)
            if angle is not None:
                if not clifford_approx:
                    raise ValueError("frame propagation needs clifford_approx")
                if op.tag == "injection":
                    k = angle / (math.pi / 2.0)
                    ik = int(round(k))
                    if abs(k - ik) > 1e-9:
                        raise ValueError(
                            "clifford approximation needs theta to be a"
                            " multiple of pi/2"
                        )
                    steps = _QUARTER_TURNS[ik % 4]
                elif op.tag == "T_gate":
                    steps = _QUARTER_TURNS[1]
                else:
                    steps = _QUARTER_TURNS[3]
                for q in op.targets:
                    for step in steps:
                        frame = conjugate_pauli(frame, gate_map(step), [axis[q]])
        elif name in GATE1:
            cmap = gate_map(name)
            for q in op.targets:
                frame = conjugate_pauli(frame, cmap, [axis[q]])
        elif name in GATE2:
            cmap = gate_map(name)
            for i in range(0, len(op.targets), 2):
                frame = conjugate_pauli(
                    frame, cmap, [axis[op.targets[i]], axis[op.targets[i + 1]]])
        elif name in MEASURE:
            letter_m = "X" if name == "MX" else "Z"
            for q in op.targets:
                probe = PauliString.single(n, axis[q], letter_m)
                flips.append(0 if commutes(frame, probe) else 1)
        elif name in RESET:
            mask = 0
            for q in op.targets:
                mask |= 1 << axis[q]
            frame = PauliString(n, frame.x & ~mask, frame.z & ~mask)
        elif name == "MPP":
            for product in op.targets:
                x = z = 0
                for pl, q in product:
                    bit = 1 << axis[q]
                    if pl in ("X", "Y"):
                        x |= bit
                    if pl in ("Z", "Y"):
                        z |= bit
                probe = PauliString(n, x, z)
                flips.append(0 if commutes(frame, probe) else 1)
        elif name in CHANNEL:
            pass
        else:
            raise ValueError("cannot propagate through %r" % (name,))

        if idx == fault_idx:
            extra = PauliString.single(n, axis[fault_q], letter)
            frame = PauliString(n, frame.x ^ extra.x, frame.z ^ extra.z)

    return evaluate_records(circuit, flips)
