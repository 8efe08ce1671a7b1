"""Mixed-world building blocks: bit extraction, equality and conversions.

Boolean circuits run on boolean sharings, one round per AND layer. The
conversions from boolean to arithmetic all go through the term engine of
mult: for a bit b = m xor l, its ring value is m + (1 - 2m) * l^R, which is
linear in the lifted mask l^R with a public coefficient. Products of such
bits with arithmetic values expand into monomials in the lifted masks and
the value masks, which preprocessing supplies.
"""
from __future__ import annotations

import functools

import numpy as np

from . import circuits
from .mult import Term, dealer_share, dotp, evaluate, product, push
from .ring import BOOL, Ring
from .sharing import MShare, concat, constant, holds_m, joint_share, mask_total, share, share_pre, stack
from .transport import Party

__all__ = ["a2b", "b2a", "bit2a", "bit_inj", "bit_inj_sum", "bitext", "dbit2a", "dbit_inj", "dotp",
           "eq", "eval_circuit", "lift"]


# ---------------------------------------------------------------- circuit evaluation

def _schedule(circuit: circuits.Circuit):
    """Gates grouped by AND depth: (ANDs at the level, free gates at the level)."""
    levels = circuit.levels
    plan = [([], []) for _ in range(max(levels.values(), default=0) + 1)]
    for g in circuit.gates:
        plan[levels[g.out]][0 if g.is_and else 1].append(g)
    return plan


def eval_circuit(ctx: Party, circuit: circuits.Circuit, inputs: MShare) -> MShare:
    """Evaluate circuit on boolean sharings with a trailing axis of input wires.

    All AND gates of one layer share one round, batched by fan-in.
    """
    if not inputs.ring.is_bool:
        raise TypeError("circuits take boolean sharings")
    if inputs.shape[-1] != circuit.n_inputs:
        raise ValueError(f"circuit expects {circuit.n_inputs} input wires, got {inputs.shape[-1]}")
    shape = inputs.shape[:-1]
    plan = _schedule(circuit)
    order = [g for ands, free in plan for g in ands + free]
    last_use = {}
    for idx, g in enumerate(order):
        for w in g.ins:
            last_use[w] = idx
    keep = set(circuit.outputs)
    wires = {i: inputs[..., i] for i in range(circuit.n_inputs)}
    done = 0
    with ctx.gate("circuit"):
        for ands, free in plan:
            if ands:
                with ctx.round():
                    by_fan = {}
                    for g in ands:
                        by_fan.setdefault(len(g.ins), []).append(g)
                    for fan, group in sorted(by_fan.items()):
                        factors = [stack([wires[g.ins[j]] for g in group], axis=-1) for j in range(fan)]
                        z = product(ctx, factors, name=f"and{fan}")
                        for i, g in enumerate(group):
                            wires[g.out] = z[..., i]
            for g in free:
                if g.op == "XOR":
                    wires[g.out] = wires[g.ins[0]] + wires[g.ins[1]]
                elif g.op == "NOT":
                    wires[g.out] = wires[g.ins[0]].invert()
                else:
                    wires[g.out] = constant(ctx, int(g.op[-1]), shape, BOOL)
            for g in ands + free:
                for w in g.ins:
                    if last_use[w] == done and w not in keep:
                        wires.pop(w, None)
                done += 1
    return stack([wires[w] for w in circuit.outputs], axis=-1)


@functools.lru_cache(maxsize=None)
def _msb_circuit(width, addends, fan_in):
    return circuits.msb_circuit(width, addends, fan_in)


@functools.lru_cache(maxsize=None)
def _adder_circuit(width, addends, fan_in):
    return circuits.adder_circuit(width, addends, fan_in)


@functools.lru_cache(maxsize=None)
def _eq_circuit(width):
    return circuits.equality_circuit(width)


# ---------------------------------------------------------------- boolean operands

def _bits(ring: Ring, value):
    return None if value is None else ring.to_bits(value)


def pre_bits(ctx: Party, owners, value_fn, shape) -> MShare:
    """Boolean sharing (m = 0) of bits known to owners, made during preprocessing."""
    with ctx.gate("psh"):
        lam = ctx.prep(lambda: share_pre(ctx, owners, value_fn() if ctx.knows(owners) else None,
                                         shape, BOOL).lam)
        return MShare(BOOL.zeros(shape) if holds_m(ctx) else None, lam, BOOL, shape)


def _online_bits(ctx: Party, holders, value_fn, shape) -> MShare:
    """Boolean sharing of online bits known to holders: joint for a pair, plain for one party."""
    value = value_fn() if ctx.me in holders and ctx.online_active else None
    if len(holders) == 1:
        return share(ctx, holders[0], value, shape, BOOL)
    return joint_share(ctx, holders, value, shape, BOOL)


def _addends(ctx: Party, v: MShare) -> list:
    """Boolean sharings of two or three values summing to v, bit-decomposed."""
    ring, fw = v.ring, ctx.fw
    shape = v.shape + (ring.bits,)
    lam = v.lam
    tot = lambda *js: mask_total(ctx, [lam[j] for j in js], ring)  # noqa: E731
    if fw.name == "astra":
        return [_online_bits(ctx, (1, 2), lambda: _bits(ring, v.m), shape),
                pre_bits(ctx, (0,), lambda: _bits(ring, ring.neg(tot(0, 1))), shape)]
    if fw.name == "aby2":
        return [_online_bits(ctx, (1,), lambda: _bits(ring, ring.sub(v.m, lam[0])), shape),
                pre_bits(ctx, (2,), lambda: _bits(ring, ring.neg(lam[1])), shape)]
    first = _online_bits(ctx, (1, 2), lambda: _bits(ring, ring.sub(v.m, lam[2])), shape)
    if fw.name == "swift":
        return [first,
                pre_bits(ctx, (1, 3), lambda: _bits(ring, ring.neg(lam[0])), shape),
                pre_bits(ctx, (2, 3), lambda: _bits(ring, ring.neg(lam[1])), shape)]
    return [first, pre_bits(ctx, (0, 3), lambda: _bits(ring, ring.neg(tot(0, 1))), shape)]


def bitext(ctx: Party, v: MShare, fan_in: int = 4) -> MShare:
    """Boolean sharing of the most significant bit of v."""
    with ctx.gate("bitext"):
        adds = _addends(ctx, v)
        circuit = _msb_circuit(v.ring.bits, len(adds), fan_in)
        return eval_circuit(ctx, circuit, concat(adds, axis=-1))[..., 0]


def a2b(ctx: Party, v: MShare, fan_in: int = 4) -> MShare:
    """Boolean sharing of the bits of v, least significant first."""
    with ctx.gate("a2b"):
        adds = _addends(ctx, v)
        circuit = _adder_circuit(v.ring.bits, len(adds), fan_in)
        return eval_circuit(ctx, circuit, concat(adds, axis=-1))


def _mask_bits_swift(ctx: Party, v: MShare, fan_in: int) -> MShare:
    """Bits of l1 + l2 for SWIFT, by an adder run inside preprocessing."""
    ring = v.ring
    shape = v.shape + (ring.bits,)
    with ctx.gate("lamsum"):
        def pre():
            with ctx.preprocessing_circuit():
                x = pre_bits(ctx, (1, 3), lambda: _bits(ring, v.lam[0]), shape)
                y = pre_bits(ctx, (2, 3), lambda: _bits(ring, v.lam[1]), shape)
                out = eval_circuit(ctx, _adder_circuit(ring.bits, 2, fan_in), concat([x, y], axis=-1))
            return out.m, out.lam

        m, lam = ctx.prep(pre)
        return MShare(m if holds_m(ctx) else None, lam, BOOL, shape)


def eq(ctx: Party, a: MShare, b: MShare, fan_in: int = 4) -> MShare:
    """Boolean sharing of [a == b]: split a - b = m - l into two sides and compare bits."""
    ring, fw = a.ring, ctx.fw
    with ctx.gate("eq"):
        y = a - b
        shape = y.shape + (ring.bits,)
        lam = y.lam
        if fw.name == "astra":
            left = _online_bits(ctx, (1, 2), lambda: _bits(ring, y.m), shape)
            right = pre_bits(ctx, (0,), lambda: _bits(ring, mask_total(ctx, lam, ring)), shape)
        elif fw.name == "aby2":
            left = _online_bits(ctx, (1,), lambda: _bits(ring, ring.sub(y.m, lam[0])), shape)
            right = pre_bits(ctx, (2,), lambda: _bits(ring, lam[1]), shape)
        else:
            left = _online_bits(ctx, (1, 2), lambda: _bits(ring, ring.sub(y.m, lam[2])), shape)
            if fw.name == "swift":
                right = _mask_bits_swift(ctx, y, fan_in)
            else:
                right = pre_bits(ctx, (0, 3), lambda: _bits(ring, mask_total(ctx, lam[:2], ring)), shape)
        return eval_circuit(ctx, _eq_circuit(ring.bits), concat([left, right], axis=-1))[..., 0]


# ---------------------------------------------------------------- lifted masks

def lift(ctx: Party, b: MShare, ring: Ring) -> list:
    """Arithmetic mask-layout sharing of b's boolean mask, read as a ring element.

    Call during preprocessing. The helper or dealer knows the mask; in Tetrad
    P3 checks the helper's claim against a masked copy of the mask.
    """
    fw = ctx.fw
    shape = b.shape
    comps = [None if c is None else np.broadcast_to(c, shape) for c in b.lam]
    full = mask_total(ctx, comps, BOOL) if (ctx.me == fw.helper or ctx.is_dealer) else None
    if fw.name == "astra":
        c0 = ctx.sample((0, 1), shape, ring, name="lift0")
        c1 = push(ctx, 0, 2, None if full is None else ring.sub(full, c0), shape, ring, tag="lift")
        return [c0, c1]
    if fw.name in ("aby2", "swift"):
        return dealer_share(ctx, full, shape, ring, name="lift")
    return _lift_tetrad(ctx, comps, full, shape, ring)


def _lift_tetrad(ctx: Party, comps, full, shape, ring: Ring) -> list:
    me = ctx.me
    u1 = ctx.sample((0, 1, 3), shape, ring, name="lu1")
    u2 = ctx.sample((0, 2, 3), shape, ring, name="lu2")
    u3 = None
    if me == 0:
        u3 = ring.sub(ring.sub(full, u1), u2)
        ctx.send(1, u3, ring, tag="lu3")
        ctx.send(2, u3, ring, tag="lu3")
    elif me in (1, 2):
        u3 = ctx.recv_array(0, shape, tag="lu3", ring=ring)
        ctx.hash_send(3 - me, ("lift",), u3)
        ctx.hash_expect(3 - me, ("lift",), u3)
    # P3 rebuilds the mask blinded by a bit it does not know and checks the
    # helper's sharing against it.
    rb = ctx.sample((0, 1, 2), shape, BOOL, name="lrb")
    rr = ctx.sample((0, 1, 2), shape, ring, name="lrr")
    blinded = None if comps[2] is None or rb is None else BOOL.add(comps[2], rb)
    t = ctx.jsnd(1, 2, 3, blinded, shape, BOOL, tag="lt")
    flip = None if rb is None else ring.sub(ring.const(1), ring.mul(ring.const(2), rb))
    w1 = w2 = None
    if me in (0, 1):
        w1 = ring.add(ring.add(rb, ring.mul(ring.add(u1, u3), flip)), rr)
    if me in (0, 2):
        w2 = ring.sub(ring.mul(u2, flip), rr)
    w1 = ctx.jsnd(1, 0, 3, w1, shape, ring, tag="lw1")
    w2 = ctx.jsnd(2, 0, 3, w2, shape, ring, tag="lw2")
    if me == 3:
        opened = BOOL.add(BOOL.add(comps[0], comps[1]), t)
        if np.any(ring.sub(ring.sub(opened, w1), w2)):
            ctx.flag_abort("lifted mask does not match")
    return [u1, u2, u3]


def _delta(ring: Ring, m):
    return ring.sub(ring.const(1), ring.mul(ring.const(2), m))


def _m(share: MShare, shape):
    return np.broadcast_to(share.m, shape)


def bit2a(ctx: Party, b: MShare, ring: Ring | None = None) -> MShare:
    """Arithmetic sharing of a shared bit."""
    ring = ring or ctx.ring
    shape = b.shape

    def online():
        m = _m(b, shape)
        return [_delta(ring, m)], m

    return evaluate(ctx, "bit2a", lambda: [lift(ctx, b, ring)], [Term((0,))], online, shape, ring)


def dbit2a(ctx: Party, b1: MShare, b2: MShare, ring: Ring | None = None) -> MShare:
    """Arithmetic sharing of the product of two shared bits."""
    ring = ring or ctx.ring
    shape = np.broadcast_shapes(b1.shape, b2.shape)
    terms = [Term((0,)), Term((1,)), Term((0, 1))]

    def online():
        m1, m2 = _m(b1, shape), _m(b2, shape)
        d1, d2 = _delta(ring, m1), _delta(ring, m2)
        return [ring.mul(m2, d1), ring.mul(m1, d2), ring.mul(d1, d2)], ring.mul(m1, m2)

    return evaluate(ctx, "dbit2a", lambda: [lift(ctx, _bshape(b1, shape), ring), lift(ctx, _bshape(b2, shape), ring)], terms, online,
                    shape, ring)


_INJ_TERMS = [Term((1,)), Term((0,)), Term((0, 1))]


def _inj_online(ring, b, v, shape):
    def online():
        mb, mv = _m(b, shape), _m(v, shape)
        d = _delta(ring, mb)
        return [ring.neg(mb), ring.mul(d, mv), ring.neg(d)], ring.mul(mb, mv)
    return online


def _bshape(b: MShare, shape) -> MShare:
    return b.map(lambda a: np.broadcast_to(a, shape), shape)


def bit_inj(ctx: Party, b: MShare, v: MShare, trunc: bool = False) -> MShare:
    """Arithmetic sharing of b * v for a boolean b and arithmetic v."""
    ring = v.ring
    shape = np.broadcast_shapes(b.shape, v.shape)
    bb = _bshape(b, shape)
    return evaluate(ctx, "bitinj", lambda: [lift(ctx, bb, ring), v.lam], _INJ_TERMS,
                    _inj_online(ring, b, v, shape), shape, ring, trunc)


def bit_inj_sum(ctx: Party, bits: MShare, values: MShare, trunc: bool = False) -> MShare:
    """sum_i b_i * v_i over the last axis; the online cost does not grow with its length."""
    ring = values.ring
    shape = np.broadcast_shapes(bits.shape, values.shape)
    bb = _bshape(bits, shape)
    return evaluate(ctx, "bitinjs", lambda: [lift(ctx, bb, ring), values.lam], _INJ_TERMS,
                    _inj_online(ring, bits, values, shape), shape, ring, trunc, reduce=True)


def dbit_inj(ctx: Party, b1: MShare, b2: MShare, v: MShare, trunc: bool = False) -> MShare:
    """Arithmetic sharing of b1 * b2 * v."""
    ring = v.ring
    shape = np.broadcast_shapes(b1.shape, b2.shape, v.shape)
    terms = [Term((2,)), Term((1,)), Term((1, 2)), Term((0,)), Term((0, 2)), Term((0, 1)), Term((0, 1, 2))]

    def online():
        m1, m2, mv = _m(b1, shape), _m(b2, shape), _m(v, shape)
        d1, d2 = _delta(ring, m1), _delta(ring, m2)
        m1d2, m2d1, dd = ring.mul(m1, d2), ring.mul(m2, d1), ring.mul(d1, d2)
        coefs = [ring.neg(ring.mul(m1, m2)), ring.mul(m1d2, mv), ring.neg(m1d2), ring.mul(m2d1, mv),
                 ring.neg(m2d1), ring.mul(dd, mv), ring.neg(dd)]
        return coefs, ring.mul(ring.mul(m1, m2), mv)

    def atoms():
        return [lift(ctx, _bshape(b1, shape), ring), lift(ctx, _bshape(b2, shape), ring), v.lam]

    return evaluate(ctx, "dbitinj", atoms, terms, online, shape, ring, trunc)


def b2a(ctx: Party, bits: MShare, ring: Ring | None = None) -> MShare:
    """Arithmetic sharing of sum_i 2^i b_i over the trailing bit axis."""
    ring = ring or ctx.ring
    shape = bits.shape
    weights = ring.reduce(np.uint64(1) << np.arange(shape[-1], dtype=np.uint64))

    def online():
        m = _m(bits, shape)
        return [ring.mul(weights, _delta(ring, m))], ring.mul(weights, m)

    return evaluate(ctx, "b2a", lambda: [lift(ctx, bits, ring)], [Term((0,))], online, shape, ring,
                    reduce=True)
