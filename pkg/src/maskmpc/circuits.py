"""Boolean circuits over AND (fan-in 2 to 4), XOR and NOT gates.

Circuits are built with constant folding and dead-gate elimination, can be
written as a text netlist with one gate per line (op, fan-in ids, out id) and
evaluated in the clear for testing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ZERO = "0"
ONE = "1"
MAX_FAN_IN = 4


@dataclass(frozen=True)
class Gate:
    op: str
    ins: tuple
    out: int

    @property
    def is_and(self) -> bool:
        return self.op.startswith("AND")


@dataclass
class Circuit:
    n_inputs: int
    gates: list
    outputs: list
    levels: dict = field(default_factory=dict)

    def __post_init__(self):
        level = {i: 0 for i in range(self.n_inputs)}
        for g in self.gates:
            base = max((level[w] for w in g.ins), default=0)
            level[g.out] = base + 1 if g.is_and else base
        self.levels = level

    @property
    def depth(self) -> int:
        """Number of AND layers, which is the number of interactive rounds."""
        return max((self.levels[w] for w in self.outputs), default=0)

    def count(self, op_prefix: str = "AND") -> int:
        return sum(g.op.startswith(op_prefix) for g in self.gates)

    def to_netlist(self) -> str:
        lines = [f"# inputs {self.n_inputs}", f"# outputs {' '.join(map(str, self.outputs))}"]
        for g in self.gates:
            lines.append(" ".join([g.op, *map(str, g.ins), str(g.out)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_netlist(cls, text: str) -> "Circuit":
        n_inputs, outputs, gates = 0, [], []
        for lineno, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if parts[1] == "inputs":
                    n_inputs = int(parts[2])
                elif parts[1] == "outputs":
                    outputs = [int(w) for w in parts[2:]]
                continue
            try:
                ids = [int(w) for w in parts[1:]]
            except ValueError:
                raise ValueError(f"netlist line {lineno}: non-integer wire id") from None
            gates.append(Gate(parts[0], tuple(ids[:-1]), ids[-1]))
        return cls(n_inputs, gates, outputs)

    def evaluate(self, bits) -> np.ndarray:
        """Plaintext evaluation; bits has a trailing axis of length n_inputs."""
        bits = np.asarray(bits, dtype=np.uint8)
        wires = {i: bits[..., i] for i in range(self.n_inputs)}
        for g in self.gates:
            ins = [wires[w] for w in g.ins]
            if g.is_and:
                val = ins[0]
                for x in ins[1:]:
                    val = val & x
            elif g.op == "XOR":
                val = ins[0] ^ ins[1]
            elif g.op == "NOT":
                val = ins[0] ^ 1
            elif g.op in ("CONST0", "CONST1"):
                val = np.full(bits.shape[:-1], int(g.op[-1]), dtype=np.uint8)
            else:
                raise ValueError(f"unknown gate {g.op}")
            wires[g.out] = val
        return np.stack([wires[w] for w in self.outputs], axis=-1)


class Builder:
    """Incremental circuit construction. Wires are ints, or ZERO / ONE."""

    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self.gates: list[Gate] = []
        self._next = n_inputs
        self._cache: dict = {}

    def inputs(self, start: int, n: int) -> list:
        return list(range(start, start + n))

    def _emit(self, op: str, ins: tuple):
        key = (op, ins)
        if key in self._cache:
            return self._cache[key]
        out = self._next
        self._next += 1
        self.gates.append(Gate(op, ins, out))
        self._cache[key] = out
        return out

    def not_(self, a):
        if a == ZERO:
            return ONE
        if a == ONE:
            return ZERO
        return self._emit("NOT", (a,))

    def xor(self, a, b):
        if a == ZERO:
            return b
        if b == ZERO:
            return a
        if a == ONE:
            return self.not_(b)
        if b == ONE:
            return self.not_(a)
        return self._emit("XOR", tuple(sorted((a, b))))

    def xor_all(self, wires):
        acc = ZERO
        for w in wires:
            acc = self.xor(acc, w)
        return acc

    def and_(self, *ins):
        if ZERO in ins:
            return ZERO
        ins = tuple(sorted(set(w for w in ins if w != ONE)))
        if not ins:
            return ONE
        if len(ins) == 1:
            return ins[0]
        if len(ins) > MAX_FAN_IN:
            raise ValueError(f"AND fan-in {len(ins)} exceeds {MAX_FAN_IN}")
        return self._emit(f"AND{len(ins)}", ins)

    def build(self, outputs) -> Circuit:
        """Materialize constant outputs, then drop gates that do not reach an output."""
        outs = []
        for w in outputs:
            if w in (ZERO, ONE):
                w = self._emit("CONST" + w, ())
            outs.append(w)
        live = set(outs)
        kept = []
        for g in reversed(self.gates):
            if g.out in live:
                kept.append(g)
                live.update(g.ins)
        kept.reverse()
        return Circuit(self.n_inputs, kept, outs)


# ---------------------------------------------------------------- adders

class _Prefix:
    """Group generate and propagate wires under an AND-depth budget.

    A depth-d propagate covers up to k^d bits and a depth-d generate up to
    k^d - 1 bits: the generate of a range is split into blocks whose
    generates have depth d - 1, each ANDed with at most k - 1 depth-(d-1)
    propagates spanning the bits above it.
    """

    def __init__(self, b: Builder, a_bits, b_bits, fan_in: int):
        self.b, self.a, self.bb, self.k = b, a_bits, b_bits, fan_in
        self.p = [b.xor(x, y) for x, y in zip(a_bits, b_bits)]
        self._gen: dict = {}
        self._prop: dict = {}

    def depth_for(self, width: int) -> int:
        d = 1
        while self.k ** d - 1 < width:
            d += 1
        return d

    def prop(self, lo: int, hi: int, d: int):
        if lo > hi:
            return ONE
        if lo == hi:
            return self.p[lo]
        key = (lo, hi, d)
        if key not in self._prop:
            if hi - lo + 1 > self.k ** d:
                raise ValueError("propagate window exceeds the depth budget")
            chunk = self.k ** (d - 1)
            parts = [self.prop(max(lo, top - chunk + 1), top, d - 1) for top in range(hi, lo - 1, -chunk)]
            self._prop[key] = self.b.and_(*parts)
        return self._prop[key]

    def span(self, lo: int, hi: int, d: int) -> list:
        """At most k - 1 depth-(d-1) propagates covering [lo, hi]."""
        chunk = self.k ** (d - 1)
        parts = [self.prop(max(lo, top - chunk + 1), top, d - 1) for top in range(hi, lo - 1, -chunk)]
        if len(parts) > self.k - 1:
            raise ValueError("generate window exceeds the depth budget")
        return parts

    def gen(self, lo: int, hi: int, d: int):
        key = (lo, hi, d)
        if key in self._gen:
            return self._gen[key]
        b = self.b
        terms = []
        if d == 1:
            if hi - lo + 1 > self.k - 1:
                raise ValueError("generate window exceeds the depth budget")
            for j in range(lo, hi + 1):
                terms.append(b.and_(self.a[j], self.bb[j], *self.p[j + 1:hi + 1]))
        else:
            block = self.k ** (d - 1) - 1
            start = lo
            while start <= hi:
                top = min(start + block - 1, hi)
                sub = self.gen(start, top, self.depth_for(top - start + 1))
                terms.append(b.and_(sub, *self.span(top + 1, hi, d)))
                start = top + 1
        self._gen[key] = b.xor_all(terms)
        return self._gen[key]


def prefix_carries(b: Builder, a_bits, b_bits, fan_in: int = 4) -> list:
    """carry[i] into position i of a + b, within ceil(log_k(i + 1)) AND layers."""
    if fan_in not in (2, 3, 4):
        raise ValueError("prefix fan-in must be 2, 3 or 4")
    pre = _Prefix(b, a_bits, b_bits, fan_in)
    return [ZERO] + [pre.gen(0, i - 1, pre.depth_for(i)) for i in range(1, len(a_bits))]


def full_adder_layer(b: Builder, x, y, z):
    """Three addends to two: (sum, carry shifted into the next position)."""
    sums = [b.xor(b.xor(u, v), w) for u, v, w in zip(x, y, z)]
    carries = [b.xor(b.and_(b.xor(u, w), b.xor(v, w)), w) for u, v, w in zip(x, y, z)]
    return sums, [ZERO] + carries[:-1]


def _addends(b: Builder, width: int, count: int):
    ops = [b.inputs(k * width, width) for k in range(count)]
    if count == 3:
        return full_adder_layer(b, *ops)
    if count != 2:
        raise ValueError("adders take two or three addends")
    return ops


def adder_circuit(width: int, addends: int = 2, fan_in: int = 4) -> Circuit:
    """Sum bits of two or three width-bit addends, modulo 2^width."""
    b = Builder(width * addends)
    x, y = _addends(b, width, addends)
    carries = prefix_carries(b, x, y, fan_in)
    return b.build([b.xor(b.xor(u, v), c) for u, v, c in zip(x, y, carries)])


def msb_circuit(width: int, addends: int = 2, fan_in: int = 4) -> Circuit:
    """Most significant bit of the sum of two or three addends."""
    b = Builder(width * addends)
    x, y = _addends(b, width, addends)
    carries = prefix_carries(b, x, y, fan_in)
    return b.build([b.xor(b.xor(x[-1], y[-1]), carries[-1])])


def equality_circuit(width: int, fan_in: int = 4) -> Circuit:
    """1 iff the two width-bit inputs agree: an AND tree over xnor bits."""
    b = Builder(2 * width)
    level = [b.not_(b.xor(u, v)) for u, v in zip(b.inputs(0, width), b.inputs(width, width))]
    while len(level) > 1:
        level = [b.and_(*level[i:i + fan_in]) for i in range(0, len(level), fan_in)]
    return b.build(level)
