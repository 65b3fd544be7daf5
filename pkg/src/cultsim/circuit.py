"""Circuit intermediate representation and text-format round-tripping.

The on-disk format is line oriented.  ``Q(x,y)id`` declares a qubit
coordinate.  Operation lines are a mnemonic, an optional ``[tag]``
annotation, an optional parenthesized numeric argument list, and a
target list.  Targets may be space separated or underscore separated
(both appear in published listings); emission always normalizes to
space-joined.  ``DT(x,y,t)`` and ``OI(k)`` lines declare detectors and
observables over relative measurement-record references ``rec[-k]``.
``MPP`` lines measure one or more Pauli products such as ``X11*X18``.
``MARKX``/``MARKZ``/``POLYGON`` lines are display annotations and are
preserved opaquely for round-tripping, never interpreted.
"""

from __future__ import annotations

import re

__all__ = [
    "CircuitError",
    "Instruction",
    "Circuit",
    "parse",
    "parse_file",
    "emit",
    "stats",
    "evaluate_records",
]


class CircuitError(ValueError):
    """Raised for malformed circuit text or invalid record references."""


# Mnemonic categories.  CHANNEL and RZ lines do not appear in published
# listings; they are the insertion format used by the noise pass.
GATE1 = frozenset(["I", "H", "H_YZ", "S", "S_DAG", "X", "Y", "Z"])
GATE2 = frozenset(["CZ", "CX"])
MEASURE = frozenset(["M", "MX"])
RESET = frozenset(["R", "RX"])
CHANNEL = frozenset(["X_ERROR", "Y_ERROR", "Z_ERROR", "DEPOLARIZE1", "DEPOLARIZE2"])
ROTATION = frozenset(["RZ"])
MARKER = frozenset(["MARKX", "MARKZ", "POLYGON"])

_QUBIT_TARGET = GATE1 | GATE2 | MEASURE | RESET | CHANNEL | ROTATION | MARKER
_REC_TARGET = frozenset(["DT", "OI"])
_ARG_REQUIRED = frozenset(["DT", "OI", "Q"]) | MARKER | CHANNEL | ROTATION

MNEMONICS = _QUBIT_TARGET | _REC_TARGET | frozenset(["MPP", "TICK", "Q"])

# Longest-first so H_YZ wins over H, MPP over M, RZ/RX over R, etc.
_MNEMONICS_BY_LENGTH = sorted(MNEMONICS, key=len, reverse=True)

_TAG_RE = re.compile(r"\[([A-Za-z0-9_]+)\]")
_ARGS_RE = re.compile(r"\(([^)]*)\)")
_REC_RE = re.compile(r"rec\[(-\d+)\]")
_PRODUCT_RE = re.compile(r"[XYZ]\d+(?:\*[XYZ]\d+)*")


def _parse_number(token, context):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise CircuitError("malformed %s: %r" % (context, token)) from None


def _format_number(value):
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


class Instruction:
    """One operation line: mnemonic, optional tag, optional args, targets.

    Targets are qubit ids (ints) for gates, negative record offsets
    (ints) for DT/OI, and Pauli products for MPP.  A product is a tuple
    of (letter, qubit) pairs in written order.
    """

    __slots__ = ("name", "targets", "tag", "arg")

    def __init__(self, name, targets=(), tag=None, arg=None):
        self.name = name
        self.targets = tuple(targets)
        self.tag = tag
        self.arg = None if arg is None else tuple(arg)

    def __eq__(self, other):
        if not isinstance(other, Instruction):
            return NotImplemented
        return (self.name, self.targets, self.tag, self.arg) == (
            other.name,
            other.targets,
            other.tag,
            other.arg,
        )

    def __hash__(self):
        return hash((self.name, self.targets, self.tag, self.arg))

    def __repr__(self):
        return "Instruction(%r, %r, tag=%r, arg=%r)" % (
            self.name,
            self.targets,
            self.tag,
            self.arg,
        )

    @property
    def num_measurements(self):
        """Measurement bits this instruction appends to the record."""
        if self.name in MEASURE:
            return len(self.targets)
        if self.name == "MPP":
            return len(self.targets)
        return 0

    @property
    def num_two_qubit_gates(self):
        """CZ/CX lines pair consecutive targets: 2k targets = k gates."""
        if self.name in GATE2:
            return len(self.targets) // 2
        return 0

    def emit(self):
        parts = [self.name]
        if self.tag is not None:
            parts[0] += "[%s]" % self.tag
        if self.arg is not None:
            parts[0] += "(%s)" % ",".join(_format_number(a) for a in self.arg)
        for t in self.targets:
            if self.name in _REC_TARGET:
                parts.append("rec[%d]" % t)
            elif self.name == "MPP":
                parts.append("*".join("%s%d" % (letter, q) for letter, q in t))
            else:
                parts.append(str(t))
        return " ".join(parts)


class Circuit:
    """Ordered instruction list plus qubit coordinates.

    Detectors, observables, and display annotations live in the op
    stream (their position relative to measurements is semantic for
    record references) and are exposed as filtered views.
    """

    def __init__(self):
        self.qubits = {}
        self.ops = []

    def __eq__(self, other):
        if not isinstance(other, Circuit):
            return NotImplemented
        return self.qubits == other.qubits and self.ops == other.ops

    def __repr__(self):
        return "Circuit(%d qubits, %d ops)" % (len(self.qubits), len(self.ops))

    def copy(self):
        c = Circuit()
        c.qubits = dict(self.qubits)
        c.ops = list(self.ops)
        return c

    # Builder helpers used by the protocol constructors.
    def declare(self, qid, x, y):
        if qid in self.qubits and self.qubits[qid] != (x, y):
            raise CircuitError("conflicting declaration for qubit %d" % qid)
        self.qubits[qid] = (x, y)

    def append(self, name, targets=(), tag=None, arg=None):
        self.ops.append(Instruction(name, targets, tag=tag, arg=arg))

    def tick(self):
        self.ops.append(Instruction("TICK"))

    def detector(self, coords, offsets):
        self.ops.append(Instruction("DT", offsets, arg=coords))

    def observable(self, index, offsets):
        self.ops.append(Instruction("OI", offsets, arg=(index,)))

    @property
    def detectors(self):
        return [(op.arg, op.targets) for op in self.ops if op.name == "DT"]

    @property
    def observables(self):
        return [(op.arg[0], op.targets) for op in self.ops if op.name == "OI"]

    @property
    def annotations(self):
        return [op for op in self.ops if op.name in MARKER]

    @property
    def num_measurements(self):
        return sum(op.num_measurements for op in self.ops)

    def measuring_ops(self):
        """(op index, first record index) for each measuring instruction."""
        out = []
        count = 0
        for i, op in enumerate(self.ops):
            k = op.num_measurements
            if k:
                out.append((i, count))
                count += k
        return out

    def validate(self):
        """Check every record reference resolves to a prior measurement."""
        count = 0
        for op in self.ops:
            if op.name in _REC_TARGET:
                for offset in op.targets:
                    if not (-count <= offset <= -1):
                        raise CircuitError(
                            "dangling rec reference rec[%d] with %d measurements so far"
                            % (offset, count)
                        )
            count += op.num_measurements
        return self


def _match_mnemonic(line):
    for name in _MNEMONICS_BY_LENGTH:
        if line.startswith(name):
            rest = line[len(name):]
            if rest == "" or rest[0] in "[(_ \t":
                return name, rest
    raise CircuitError("unknown mnemonic in line: %r" % line)


def _parse_head(line):
    """Split a line into (name, tag, args, remainder-with-targets)."""
    name, rest = _match_mnemonic(line)
    tag = None
    args = None
    if rest.startswith("["):
        m = _TAG_RE.match(rest)
        if m is None:
            raise CircuitError("unterminated tag in line: %r" % line)
        tag = m.group(1)
        rest = rest[m.end():]
    if rest.startswith("("):
        m = _ARGS_RE.match(rest)
        if m is None:
            raise CircuitError("unterminated argument list in line: %r" % line)
        context = "coordinate" if name in ("Q", "DT") else "argument"
        body = m.group(1)
        if body.strip() == "":
            raise CircuitError("malformed %s: empty in %r" % (context, line))
        args = tuple(_parse_number(tok.strip(), context) for tok in body.split(","))
        rest = rest[m.end():]
    # Targets may follow the tag/argument group with no separator, as in
    # Q(2,2)0, MARKZ(0)5, and DT(8,8,2)rec[-12].
    return name, tag, args, rest


def _split_targets(rest):
    return [tok for tok in re.split(r"[_\s]+", rest) if tok]


def _parse_product(token):
    if _PRODUCT_RE.fullmatch(token) is None:
        raise CircuitError("malformed Pauli product: %r" % token)
    return tuple((term[0], int(term[1:])) for term in token.split("*"))


def parse(text):
    """Parse circuit text into a Circuit.  See module docstring for grammar."""
    circuit = Circuit()
    measure_count = 0
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, tag, args, rest = _parse_head(line)
        tokens = _split_targets(rest)

        if name == "Q":
            if args is None or len(args) != 2:
                raise CircuitError("malformed coordinate in line: %r" % line)
            if len(tokens) != 1:
                raise CircuitError("qubit declaration needs one id: %r" % line)
            qid = _parse_number(tokens[0], "qubit id")
            if not isinstance(qid, int):
                raise CircuitError("qubit id must be an integer: %r" % line)
            circuit.declare(qid, args[0], args[1])
            continue

        if name == "TICK":
            if tokens or tag is not None or args is not None:
                raise CircuitError("TICK takes no targets: %r" % line)
            circuit.ops.append(Instruction("TICK"))
            continue

        if args is None and name in _ARG_REQUIRED:
            context = "coordinate" if name == "DT" else "argument"
            raise CircuitError("missing %s list in line: %r" % (context, line))
        if args is not None and name not in _ARG_REQUIRED:
            raise CircuitError("unexpected argument list in line: %r" % line)

        if name in _REC_TARGET:
            if name == "OI" and (len(args) != 1 or not isinstance(args[0], int)):
                raise CircuitError("observable index must be one integer: %r" % line)
            offsets = []
            for tok in tokens:
                m = _REC_RE.fullmatch(tok)
                if m is None:
                    raise CircuitError("expected rec[-k] target: %r" % tok)
                offset = int(m.group(1))
                if not (-measure_count <= offset <= -1):
                    raise CircuitError(
                        "dangling rec reference %s with %d measurements so far"
                        % (tok, measure_count)
                    )
                offsets.append(offset)
            circuit.ops.append(Instruction(name, offsets, tag=tag, arg=args))
            continue

        if name == "MPP":
            if not tokens:
                raise CircuitError("MPP needs at least one product: %r" % line)
            products = tuple(_parse_product(tok) for tok in tokens)
            circuit.ops.append(Instruction("MPP", products, tag=tag))
            measure_count += len(products)
            continue

        targets = []
        for tok in tokens:
            value = _parse_number(tok, "target")
            if not isinstance(value, int) or value < 0:
                raise CircuitError("qubit target must be a nonnegative integer: %r" % tok)
            targets.append(value)
        if not targets:
            raise CircuitError("instruction needs targets: %r" % line)
        if name in GATE2 and len(targets) % 2 != 0:
            raise CircuitError("two-qubit gate needs an even target count: %r" % line)
        circuit.ops.append(Instruction(name, targets, tag=tag, arg=args))
        if name in MEASURE:
            measure_count += len(targets)
    return circuit


def parse_file(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def emit(circuit):
    """Canonical text: Q declarations, then ops, space-joined targets."""
    lines = []
    for qid in sorted(circuit.qubits):
        x, y = circuit.qubits[qid]
        lines.append("Q(%s,%s)%d" % (_format_number(x), _format_number(y), qid))
    for op in circuit.ops:
        lines.append(op.emit())
    if not lines:
        return ""
    return "\n".join(lines) + "\n"


# Tags whose bound simulation-time unitary is a non-Clifford rotation.
NONCLIFFORD_TAGS = frozenset(["T_gate", "T_dagger_gate", "negative_T_gate", "injection"])


def stats(circuit):
    """Structural counts: 2q gates, measurements, qubits, ticks, non-Clifford tags."""
    two_qubit = 0
    measurements = 0
    ticks = 0
    nonclifford = 0
    for op in circuit.ops:
        two_qubit += op.num_two_qubit_gates
        measurements += op.num_measurements
        if op.name == "TICK":
            ticks += 1
        if op.name == "I" and op.tag in NONCLIFFORD_TAGS:
            nonclifford += 1
    return {
        "two_qubit_gates": two_qubit,
        "measurements": measurements,
        "qubits": len(circuit.qubits),
        "ticks": ticks,
        "nonclifford_tags": nonclifford,
    }


def evaluate_records(circuit, record):
    """Detector events and observable flips for one measurement record.

    Each detector is the XOR of its referenced bits; observables with the
    same index accumulate by XOR.  The record must contain exactly one bit
    per measurement in the circuit.
    """
    bits = list(record)
    total = circuit.num_measurements
    if len(bits) != total:
        raise CircuitError(
            "record length %d does not match %d measurements" % (len(bits), total)
        )
    detectors = []
    observables = {}
    count = 0
    for op in circuit.ops:
        if op.name == "DT":
            value = 0
            for offset in op.targets:
                value ^= bits[count + offset] & 1
            detectors.append(value)
        elif op.name == "OI":
            index = op.arg[0]
            value = observables.get(index, 0)
            for offset in op.targets:
                value ^= bits[count + offset] & 1
            observables[index] = value
        count += op.num_measurements
    n_obs = (max(observables) + 1) if observables else 0
    return detectors, [observables.get(i, 0) for i in range(n_obs)]
