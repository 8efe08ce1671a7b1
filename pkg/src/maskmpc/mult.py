"""Products of masked sharings, with optional fused truncation.

Every framework evaluates the same identity. For inputs with m_k = v_k + l_k,

    prod_k v_k = sum over subsets I of (-1)^|I| * gamma_I * prod_{k not in I} m_k

where gamma_I is the product of the masks in I. The empty subset is public to
the online parties and singletons are the masks themselves. The larger subsets
come from preprocessing, split into additive "parts". Each online party adds
up the parts it holds. The full-subset term also absorbs a random r, so opening
the sum reveals c = z - r and the output is (m = c, mask of r). With
truncation, r has its top bit clear, the opened c is shifted and the output
mask is that of r >> x, which gives an error of at most one unit.

Which parts exist and who holds them is framework-specific:

    astra   "1" (P1), "2" (P2). Helper P0 knows everything.
    aby2    "1" (P1), "2" (P2). Correlated values come from the dealer.
    swift   one part per mask component, held like that component.
    tetrad  "1" (P1), "2" (P2), "g" (P3) and "s" (P1 and P2). Honest parts
            satisfy 1 + 2 + s = g, so P3 can check what P1 and P2 exchanged.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass
from functools import reduce as fold

import numpy as np

from .ring import Ring
from .sharing import MShare, share_pre, zero_lam
from .transport import Party

PARTS_OF = {
    "astra": {1: ("1",), 2: ("2",)},
    "aby2": {1: ("1",), 2: ("2",)},
    "swift": {1: ("c0", "c2"), 2: ("c1", "c2"), 3: ("c0", "c1")},
    "tetrad": {1: ("1", "s"), 2: ("2", "s"), 3: ("g",)},
}
PLAIN_PARTS = {"astra": ("1",), "aby2": ("1",), "swift": ("c2",), "tetrad": ("1", "g")}
CHECK_KEY = ("mult-check",)


# ---------------------------------------------------------------- small helpers

def sign(ring: Ring, n: int) -> np.uint64:
    return ring.const(-1 if n % 2 else 1)


def half_mask(ring: Ring, r):
    """Clear the top bit so that r < 2^(l-1)."""
    return None if r is None else r & (ring.mask >> np.uint64(1))


def exact_truncate(ring: Ring, c, frac_bits: int):
    """Shift c = z - r for a mask r < 2^(l-1) and |z| < 2^(l-2).

    Adding 2^(l-2) first makes c fit the signed range, so the shift is exact
    and adding back floor(r / 2^x) leaves an error in {-1, 0}.
    """
    offset = 1 << (ring.bits - 2)
    return ring.sub(ring.sra(ring.add(c, ring.const(offset)), frac_bits), ring.const(offset >> frac_bits))


def _total(ring: Ring, comps):
    if any(c is None for c in comps):
        return None
    return fold(ring.add, comps)


def _prod(ring: Ring, arrays):
    if any(a is None for a in arrays):
        return None
    return fold(ring.mul, arrays)


def _sum_last(ring: Ring, a, reduce: bool):
    if a is None or not reduce:
        return a
    return ring.reduce(np.asarray(a).sum(axis=-1, dtype=np.uint64))


def _opt(fn, *args):
    """fn(*args), or None when any argument is unknown here."""
    return None if any(a is None for a in args) else fn(*args)


def _bcast(comps, shape):
    return [None if c is None else np.broadcast_to(c, shape) for c in comps]


def push(ctx: Party, src: int, dst: int, value, shape, ring: Ring, tag: str):
    """src sends value to dst; returns it at both ends (None elsewhere)."""
    if ctx.me == src:
        ctx.send(dst, value, ring, tag=tag)
        return value
    if ctx.me == dst:
        return ctx.recv_array(src, shape, tag=tag, ring=ring)
    return value if ctx.is_dealer else None


def subsets(n: int, lo: int, hi: int):
    """Index subsets of range(n) with lo <= size <= hi, by size then lexicographically."""
    for size in range(lo, hi + 1):
        yield from itertools.combinations(range(n), size)


def _tag(subset) -> str:
    return "g" + "".join(map(str, subset))


# ---------------------------------------------------------------- providers

def dealer_share(ctx: Party, value, shape, ring: Ring, name: str = "d") -> list:
    """Dealer hands out <value> in the mask-component layout.

    Every component but one is drawn from the holders' common key; the dealer
    sends the remaining one. For two-party layouts that is the usual additive
    sharing.
    """
    fw = ctx.fw
    comps = [ctx.sample(h, shape, ring, name=f"{name}{j}") for j, h in enumerate(fw.lam[:-1])]
    last_holders = fw.lam[-1]
    last = None
    if ctx.is_dealer:
        last = ring.sub(ring.reduce(value), fold(ring.add, comps, ring.zeros(shape)))
        for p in last_holders:
            ctx.send(p, last, ring, tag=name)
    elif ctx.me in last_holders:
        last = ctx.recv_array(fw.dealer, shape, tag=name, ring=ring)
    return comps + [last]


def dealer_mult_pre(ctx: Party, d_comps, e_comps, shape, ring: Ring, name: str = "mp") -> list:
    """Ideal preprocessing multiplication: <d>, <e> -> fresh <d e>."""
    value = None
    if ctx.is_dealer:
        value = ring.mul(_total(ring, d_comps), _total(ring, e_comps))
    return dealer_share(ctx, value, shape, ring, name)


def dealer_dotp_pre(ctx: Party, u_comps, v_comps, shape, ring: Ring, name: str = "dp") -> list:
    """Ideal preprocessing dot product over the last axis; shape is the reduced shape."""
    value = None
    if ctx.is_dealer:
        value = _sum_last(ring, ring.mul(_total(ring, u_comps), _total(ring, v_comps)), True)
    return dealer_share(ctx, value, shape, ring, name)


def aby2_mult_pre(ctx: Party, a_comps, b_comps, shape, ring: Ring) -> list:
    """Additive [gamma_ab] between P1 and P2 from the dealer."""
    return dealer_mult_pre(ctx, a_comps, b_comps, shape, ring, name="gab")


def mult_s(ctx: Party, a, b, shape, ring: Ring) -> list:
    """Tetrad product of two helper sharings known in full to P0.

    The three cross-term groups are each held by P0 and one online party,
    randomized by a zero sharing and joint-sent to the party that completes a
    component.
    """
    with ctx.gate("mults"):
        ra = ctx.sample((0, 2, 3), shape, ring, name="z1")
        rb = ctx.sample((0, 1, 3), shape, ring, name="z2")
        rc = ctx.sample((0, 1, 2), shape, ring, name="z3")
        mul, add = ring.mul, ring.add

        def cross(x, y, p, q):
            return add(add(mul(x[p], y[q]), mul(x[q], y[p])), mul(x[q], y[q]))

        t1 = _opt(lambda z: add(cross(a, b, 0, 2), z), _opt(ring.sub, rc, rb)) if ctx.knows((0, 1)) else None
        t2 = _opt(lambda z: add(cross(a, b, 2, 1), z), _opt(ring.sub, ra, rc)) if ctx.knows((0, 2)) else None
        t3 = _opt(lambda z: add(cross(a, b, 1, 0), z), _opt(ring.sub, rb, ra)) if ctx.knows((0, 3)) else None
        e1 = ctx.jsnd(0, 1, 2, t1, shape, ring, tag="ms1")
        e2 = ctx.jsnd(0, 2, 3, t2, shape, ring, tag="ms2")
        e3 = ctx.jsnd(0, 3, 1, t3, shape, ring, tag="ms3")
        return [e3, e2, e1]


def trgen(ctx: Party, shape, ring: Ring, frac_bits: int):
    """SWIFT truncation pair: <r> and <r >> x> for r = r1 xor r2 < 2^(l-1).

    r1 is drawn by P1, P3 and r2 by P2, P3, so their bits are already valid
    helper sharings. The xor corrections are two dealer dot products.
    """
    with ctx.gate("trgen"):
        r1 = half_mask(ring, ctx.sample((1, 3), shape, ring, name="r1"))
        r2 = half_mask(ring, ctx.sample((2, 3), shape, ring, name="r2"))
        bits1 = None if r1 is None else ring.to_bits(r1)
        bits2 = None if r2 is None else ring.to_bits(r2)
        weights = ring.reduce(np.uint64(2) << np.arange(ring.bits, dtype=np.uint64))
        zero = ring.zeros(shape + (ring.bits,))
        wb1 = None if bits1 is None else ring.mul(bits1, weights)
        cross = dealer_dotp_pre(ctx, [wb1, zero, zero], [zero, bits2, zero], shape, ring, name="x")
        keep = ring.bits - frac_bits
        hi1 = None if bits1 is None else ring.mul(bits1[..., frac_bits:], weights[:keep])
        hi2 = None if bits2 is None else bits2[..., frac_bits:]
        zero = ring.zeros(shape + (keep,))
        cross_hi = dealer_dotp_pre(ctx, [hi1, zero, zero], [zero, hi2, zero], shape, ring, name="y")
        r_comps = [_opt(ring.sub, r1, cross[0]), _opt(ring.sub, r2, cross[1]), _opt(ring.neg, cross[2])]
        t1 = None if r1 is None else ring.srl(r1, frac_bits)
        t2 = None if r2 is None else ring.srl(r2, frac_bits)
        rt_comps = [_opt(ring.sub, t1, cross_hi[0]), _opt(ring.sub, t2, cross_hi[1]), _opt(ring.neg, cross_hi[2])]
        return r_comps, rt_comps


# ---------------------------------------------------------------- part layouts

def layout_parts(ctx: Party, comps, ring: Ring) -> dict:
    """Parts of a value that is already shared in the mask-component layout."""
    name = ctx.fw.name
    if name in ("astra", "aby2"):
        return {"1": comps[0], "2": comps[1]}
    if name == "swift":
        return {f"c{j}": c for j, c in enumerate(comps)}
    x1, x2, x3 = comps
    return {"1": _opt(ring.add, x1, x3), "2": x2, "g": _opt(ring.add, x1, x2), "s": _opt(ring.neg, x3)}


def _neg_comps(ring: Ring, comps) -> tuple:
    return tuple(_opt(ring.neg, c) for c in comps)


# ---------------------------------------------------------------- preprocessing

@dataclass(frozen=True)
class Term:
    """A monomial in preprocessed atoms.

    With const set, the coefficient is public in advance and the term is
    folded into the offset. Otherwise its coefficient is computed online from
    the public masked values.
    """
    atoms: tuple
    const: int | None = None


def _const_term(terms):
    consts = [t for t in terms if t.const is not None]
    if len(consts) > 1:
        raise ValueError("at most one constant-coefficient term")
    return consts[0] if consts else None


def _scaled_total(ring, values, term, reduce):
    return _opt(lambda g: ring.mul(ring.const(term.const), _sum_last(ring, g, reduce)), _prod(ring, values))


def _prep_astra(ctx, atoms, terms, shape, out_shape, ring, trunc, reduce):
    helper = ctx.me == 0
    full = [_total(ring, c) if helper else None for c in atoms]
    parts = []
    for i, t in enumerate(terms):
        if t.const is not None:
            parts.append(None)
        elif len(t.atoms) == 1:
            parts.append(layout_parts(ctx, atoms[t.atoms[0]], ring))
        else:
            gamma = _prod(ring, [full[k] for k in t.atoms]) if helper else None
            c1 = ctx.sample((0, 1), shape, ring, name=f"t{i}")
            c2 = push(ctx, 0, 2, _opt(ring.sub, gamma, c1), shape, ring, tag=f"t{i}")
            parts.append({"1": c1, "2": c2})
    ct = _const_term(terms)
    if trunc:
        r = half_mask(ring, ctx.sample((0,), out_shape, ring, name="r"))
        lam = share_pre(ctx, (0,), _opt(ring.srl, r, ctx.frac_bits), out_shape, ring).lam
    else:
        lam = (ctx.sample((0, 1), out_shape, ring, name="l0"), ctx.sample((0, 2), out_shape, ring, name="l1"))
        r = ring.neg(ring.add(*lam)) if helper else None
    if trunc or ct is not None:
        k = ring.zeros(out_shape)
        if ct is not None and helper:
            k = _scaled_total(ring, [full[j] for j in ct.atoms], ct, reduce)
        u1 = ctx.sample((0, 1), out_shape, ring, name="u1")
        u2 = push(ctx, 0, 2, ring.sub(ring.sub(k, r), u1) if helper else None, out_shape, ring, tag="u2")
        offset = {"1": u1, "2": u2}
    else:
        offset = {"1": lam[0], "2": lam[1]}
    return {"terms": parts, "offset": offset, "lam": lam}


def _prep_dealer(ctx, atoms, terms, shape, out_shape, ring, trunc, reduce):
    """ABY2 and SWIFT: every correlated value is dealt."""
    fw = ctx.fw
    full = [_total(ring, c) if ctx.is_dealer else None for c in atoms]
    parts = []
    for i, t in enumerate(terms):
        if t.const is not None:
            parts.append(None)
        elif len(t.atoms) == 1:
            parts.append(layout_parts(ctx, atoms[t.atoms[0]], ring))
        else:
            gamma = _prod(ring, [full[k] for k in t.atoms])
            parts.append(layout_parts(ctx, dealer_share(ctx, gamma, shape, ring, name=f"t{i}"), ring))
    ct = _const_term(terms)
    k = None
    if ctx.is_dealer:
        k = ring.zeros(out_shape) if ct is None else _scaled_total(ring, [full[j] for j in ct.atoms], ct, reduce)
    if not trunc:
        lam = tuple(ctx.sample(h, out_shape, ring, name=f"l{j}") for j, h in enumerate(fw.lam))
        if ct is None:
            return {"terms": parts, "offset": layout_parts(ctx, lam, ring), "lam": lam}
        r = _opt(ring.neg, _total(ring, lam))
    elif fw.name == "aby2":
        r = half_mask(ring, ctx.sample((0,), out_shape, ring, name="r"))
        lam = _neg_comps(ring, dealer_share(ctx, _opt(ring.srl, r, ctx.frac_bits), out_shape, ring, name="q"))
    if fw.name == "aby2":
        off = dealer_share(ctx, _opt(ring.sub, k, r), out_shape, ring, name="off")
    else:
        if trunc:
            r_comps, q_comps = trgen(ctx, out_shape, ring, ctx.frac_bits)
            lam = _neg_comps(ring, q_comps)
        else:
            r_comps = _neg_comps(ring, lam)
        k_comps = dealer_share(ctx, k, out_shape, ring, name="k") if ct is not None else zero_lam(ctx, out_shape, ring)
        off = [_opt(ring.sub, a, b) for a, b in zip(k_comps, r_comps)]
    return {"terms": parts, "offset": layout_parts(ctx, off, ring), "lam": lam}


def _tetrad_split(ctx, x, y, ring, reduce):
    """Local three-way split of <x><y>: K1 at {P0,P1}, K2 at {P0,P2}, K3 at {P0,P3}."""
    mul, add = ring.mul, ring.add

    def cross(p, q):
        return add(add(mul(x[p], y[q]), mul(x[q], y[p])), mul(x[q], y[q]))

    k1 = _sum_last(ring, cross(0, 2), reduce) if ctx.knows((0, 1)) else None
    k2 = _sum_last(ring, cross(2, 1), reduce) if ctx.knows((0, 2)) else None
    k3 = _sum_last(ring, cross(1, 0), reduce) if ctx.knows((0, 3)) else None
    return k1, k2, k3


def _tetrad_term(ctx, blocks, coef, shape, ring, reduce, mode, tag):
    """Check-form parts of coef * (product of blocks) minus a mask r.

    mode "exact" keeps r = 0, "mask" lets u2 be drawn (r known to P0, P3)
    and "trunc" draws r < 2^(l-1) directly. Returns (parts, r).
    """
    if len(blocks) == 1:
        scaled = [_opt(lambda c: ring.mul(coef, _sum_last(ring, c, reduce)), c) for c in blocks[0]]
        base = layout_parts(ctx, scaled, ring)
        if mode == "exact":
            return base, None
        k3 = ring.zeros(shape) if ctx.knows((0, 3)) else None
    else:
        k1, k2, k3 = (_opt(lambda k: ring.mul(coef, k), k) for k in _tetrad_split(ctx, *blocks, ring, reduce))
        s = ctx.sample((0, 1, 2), shape, ring, name=f"{tag}s")
        w = push(ctx, 0, 3, _opt(lambda a, b, c: ring.add(ring.add(a, b), c), k1, k2, s), shape, ring, tag=f"{tag}w")
        base = {"1": k1, "2": k2, "g": w, "s": s}
    u1 = ctx.sample((0, 1, 3), shape, ring, name=f"{tag}u1")
    r = None
    if mode == "mask":
        u2 = ctx.sample((0, 2, 3), shape, ring, name=f"{tag}u2")
        r = _opt(lambda k, a, b: ring.sub(ring.sub(k, a), b), k3, u1, u2)
    else:
        if mode == "trunc":
            r = half_mask(ring, ctx.sample((0, 3), shape, ring, name=f"{tag}r"))
        else:
            r = ring.zeros(shape) if ctx.knows((0, 3)) else None
        val = _opt(lambda k, a, b: ring.sub(ring.sub(k, a), b), k3, r, u1)
        u2 = ctx.jsnd(0, 3, 2, val, shape, ring, tag=f"{tag}u2")
    parts = {
        "1": _opt(ring.add, base["1"], u1),
        "2": _opt(ring.add, base["2"], u2),
        "g": _opt(lambda g, a, b: ring.add(ring.add(g, a), b), base["g"], u1, u2),
        "s": base["s"],
    }
    return parts, r


def _tetrad_blocks(ctx, atoms, terms, shape, ring) -> dict:
    """Group each term's atoms into at most two blocks, materializing pairs by MultS.

    Larger terms go first so that the pairs they create are reused by their
    sub-terms.
    """
    pairs = {}
    out = {}
    for i in sorted(range(len(terms)), key=lambda i: -len(terms[i].atoms)):
        rest, blocks = list(terms[i].atoms), []
        for pair, comps in pairs.items():
            if pair[0] in rest and pair[1] in rest:
                blocks.append(comps)
                rest.remove(pair[0])
                rest.remove(pair[1])
        while len(blocks) + len(rest) > 2:
            pair = (rest.pop(0), rest.pop(0))
            pairs[pair] = mult_s(ctx, atoms[pair[0]], atoms[pair[1]], shape, ring)
            blocks.append(pairs[pair])
        out[i] = blocks + [atoms[k] for k in rest]
    return out


def _prep_tetrad(ctx, atoms, terms, shape, out_shape, ring, trunc, reduce):
    blocks = _tetrad_blocks(ctx, atoms, terms, shape, ring)
    parts = []
    for i, t in enumerate(terms):
        if t.const is not None:
            parts.append(None)
        else:
            parts.append(_tetrad_term(ctx, blocks[i], ring.const(1), shape, ring, False, "exact", f"t{i}")[0])
    ct = _const_term(terms)
    mode = "trunc" if trunc else "mask"
    if ct is not None:
        offset, r = _tetrad_term(ctx, blocks[terms.index(ct)], ring.const(ct.const), out_shape, ring, reduce,
                                 mode, "k")
    elif trunc:
        zero = [ring.zeros(out_shape) if ctx.knows(h) else None for h in ctx.fw.lam]
        offset, r = _tetrad_term(ctx, [zero], ring.const(1), out_shape, ring, False, mode, "k")
    else:
        lam = tuple(ctx.sample(h, out_shape, ring, name=f"l{j}") for j, h in enumerate(ctx.fw.lam))
        return {"terms": parts, "offset": layout_parts(ctx, lam, ring), "lam": lam}
    q = _opt(ring.srl, r, ctx.frac_bits) if trunc else r
    lam = share_pre(ctx, (0, 3), q, out_shape, ring).lam
    return {"terms": parts, "offset": offset, "lam": lam}


PREP = {"astra": _prep_astra, "aby2": _prep_dealer, "swift": _prep_dealer, "tetrad": _prep_tetrad}


# ---------------------------------------------------------------- online

def _local_parts(ctx, pre, coefs, plain, shape, ring, reduce):
    """This party's y-parts: every non-constant term it holds, times its coefficient."""
    fw = ctx.fw
    out = {}
    for part in PARTS_OF[fw.name].get(ctx.me, ()):
        acc = ring.zeros(shape)
        for coef, held in zip(coefs, pre["terms"]):
            if held is not None:
                acc = ring.add(acc, ring.mul(coef, held[part]))
        acc = ring.add(_sum_last(ring, acc, reduce), pre["offset"][part])
        if part in PLAIN_PARTS[fw.name] and plain is not None:
            acc = ring.add(acc, _sum_last(ring, np.broadcast_to(plain, shape), reduce))
        out[part] = acc
    return out


def _open_masked(ctx, y, out_shape, ring):
    """Combine y-parts into c = z - r at P1 and P2 (P3 checks in Tetrad)."""
    name = ctx.fw.name
    me = ctx.me
    c = None
    with ctx.round():
        if name in ("astra", "aby2", "tetrad"):
            if me in (1, 2):
                other = 3 - me
                ctx.send(other, y[str(me)], ring, tag="y")
                got = ctx.recv_array(other, out_shape, tag="y", ring=ring)
                c = ring.add(y[str(me)], got)
            if name == "tetrad":
                if me == 3:
                    ctx.hash_send(1, CHECK_KEY, y["g"])
                    ctx.hash_send(2, CHECK_KEY, y["g"])
                elif me in (1, 2):
                    ctx.hash_expect(3, CHECK_KEY, ring.add(c, y["s"]))
        else:
            y0 = ctx.jsnd(1, 3, 2, y.get("c0"), out_shape, ring, tag="y0")
            y1 = ctx.jsnd(2, 3, 1, y.get("c1"), out_shape, ring, tag="y1")
            if me in (1, 2):
                c = ring.add(ring.add(y0, y1), y["c2"])
    return c


def _finish(ctx, c, pre, out_shape, ring, trunc) -> MShare:
    fw = ctx.fw
    p = None
    if c is not None:
        p = exact_truncate(ring, c, ctx.frac_bits) if trunc else c
    if fw.name in ("swift", "tetrad"):
        got = ctx.jsnd(1, 2, 3, p, out_shape, ring, tag="m", deferred=True)
        if ctx.me == 3:
            p = got
    return MShare(p if ctx.me in fw.online else None, pre["lam"], ring, out_shape)


def evaluate(ctx: Party, name: str, atoms_fn, terms, online_fn, shape, ring: Ring,
             trunc: bool = False, reduce: bool = False) -> MShare:
    """Masked sharing of plain + sum_t coef_t * prod(atoms of t), in one online round.

    atoms_fn runs during preprocessing and returns the atoms, each a list of
    mask-layout components known in full to the helper or dealer. online_fn
    runs at the online parties and returns (coefs, plain), with one
    coefficient per non-constant term (None for constant ones). Everything
    is summed over the last axis when reduce.
    """
    shape = tuple(shape)
    if reduce and not shape:
        raise ValueError("a dot product needs at least one axis")
    out_shape = shape[:-1] if reduce else shape
    if trunc and ring.is_bool:
        raise ValueError("truncation is only defined for arithmetic sharings")
    with ctx.gate(name):
        def prep():
            atoms = [_bcast(a, shape) for a in atoms_fn()]
            return PREP[ctx.fw.name](ctx, atoms, terms, shape, out_shape, ring, trunc, reduce)

        pre = ctx.prep(prep)
        if not ctx.online_active:
            return MShare(None, pre["lam"], ring, out_shape)
        y = {}
        if ctx.me in ctx.fw.online:
            coefs, plain = online_fn()
            y = _local_parts(ctx, pre, coefs, plain, shape, ring, reduce)
        c = _open_masked(ctx, y, out_shape, ring)
        return _finish(ctx, c, pre, out_shape, ring, trunc)


# ---------------------------------------------------------------- products

def _shapes(factors, reduce):
    shape = np.broadcast_shapes(*(f.shape for f in factors))
    if reduce and not shape:
        raise ValueError("a dot product needs at least one axis")
    return shape, (shape[:-1] if reduce else shape)


def _check(factors, trunc):
    ring = factors[0].ring
    if any(f.ring != ring for f in factors):
        raise TypeError("mixed rings in a product")
    if trunc and ring.is_bool:
        raise ValueError("truncation is only defined for arithmetic sharings")
    return ring


def product_terms(n: int) -> list:
    terms = [Term(sub) for sub in subsets(n, 1, n - 1)]
    return terms + [Term(tuple(range(n)), const=-1 if n % 2 else 1)]


def product(ctx: Party, factors, trunc: bool = False, reduce: bool = False, name: str = "mult") -> MShare:
    """Masked sharing of prod(factors), summed over the last axis when reduce.

    One online round. Inputs broadcast against each other.
    """
    ring = _check(factors, trunc)
    shape, _ = _shapes(factors, reduce)
    n = len(factors)
    terms = product_terms(n)

    def online():
        ms = [np.broadcast_to(f.m, shape) for f in factors]
        coefs = []
        for t in terms:
            if t.const is not None:
                coefs.append(None)
                continue
            rest = [ms[k] for k in range(n) if k not in t.atoms]
            coefs.append(ring.mul(sign(ring, len(t.atoms)), fold(ring.mul, rest)))
        return coefs, fold(ring.mul, ms)

    return evaluate(ctx, name, lambda: [f.lam for f in factors], terms, online, shape, ring, trunc, reduce)


def mult(ctx: Party, a: MShare, b: MShare, trunc: bool = False) -> MShare:
    return product(ctx, [a, b], trunc, name="mult")


def mult3(ctx: Party, a: MShare, b: MShare, c: MShare, trunc: bool = False) -> MShare:
    return product(ctx, [a, b, c], trunc, name="mult3")


def mult4(ctx: Party, a: MShare, b: MShare, c: MShare, d: MShare, trunc: bool = False) -> MShare:
    return product(ctx, [a, b, c, d], trunc, name="mult4")


def dotp(ctx: Party, a: MShare, b: MShare, trunc: bool = False) -> MShare:
    """Inner product over the last axis; online cost does not depend on its length."""
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"dot product length mismatch: {a.shape} vs {b.shape}")
    return product(ctx, [a, b], trunc, reduce=True, name="dotp")


def truncate(ctx: Party, v: MShare) -> MShare:
    """Fixed-point rescaling of v by 2^-x, within one unit."""
    return product(ctx, [v], trunc=True, name="trunc")


def scale_const_trunc(ctx: Party, v: MShare, const) -> MShare:
    """Multiply by a public fixed-point constant and rescale."""
    if not np.any(v.ring.reduce(const)):
        return v.scale(0)  # exact; truncating a zero could still land one ulp low
    return truncate(ctx, v.scale(const))


# ---------------------------------------------------------------- on-demand variants

def mult_nopre(ctx: Party, a: MShare, b: MShare, trunc: bool = False) -> MShare:
    """Product without a preprocessing phase (ASTRA and Tetrad)."""
    fw = ctx.fw
    if ctx.mode != "full":
        raise ValueError("on-demand multiplication has no preprocessing to split")
    ring = _check([a, b], trunc)
    shape, _ = _shapes([a, b], False)
    with ctx.gate("multnp"):
        if fw.name == "astra":
            return _astra_nopre(ctx, a, b, shape, ring, trunc)
        if fw.name != "tetrad":
            raise ValueError(f"{fw.name}: on-demand multiplication is defined for astra and tetrad")
        lams = [_bcast(a.lam, shape), _bcast(b.lam, shape)]
        # Without truncation the helper's messages and the exchange are independent.
        with (ctx.round() if not trunc else contextlib.nullcontext()):
            pre = _prep_tetrad(ctx, lams, product_terms(2), shape, shape, ring, trunc, False)
            y = {}
            if ctx.me in fw.online:
                ma, mb = np.broadcast_to(a.m, shape), np.broadcast_to(b.m, shape)
                coefs = [ring.neg(mb), ring.neg(ma), None]
                y = _local_parts(ctx, pre, coefs, ring.mul(ma, mb), shape, ring, False)
            c = _open_masked(ctx, y, shape, ring)
        return _finish(ctx, c, pre, shape, ring, trunc)


def _astra_nopre(ctx, a, b, shape, ring, trunc):
    """Helper P0 masks the cross terms on the fly: 3l bits, or 5l with truncation."""
    me = ctx.me
    la, lb = _bcast(a.lam, shape), _bcast(b.lam, shape)
    s1 = ctx.sample((0, 1), shape, ring, name="s1")
    s2 = ctx.sample((0, 2), shape, ring, name="s2")
    t = ctx.sample((0, 1), shape, ring, name="t")
    r = half_mask(ring, ctx.sample((0,), shape, ring, name="r")) if trunc else None
    lam2 = e = got = None
    with ctx.round():
        if me == 0:
            gamma = ring.mul(_total(ring, la), _total(ring, lb))
            if trunc:
                e = ring.sub(ring.sub(ring.sub(gamma, r), s1), s2)
                ctx.send(1, e, ring, tag="e")
                ctx.send(2, e, ring, tag="e")
                lam2 = ring.sub(ring.neg(ring.srl(r, ctx.frac_bits)), t)
            else:
                lam2 = ring.sub(ring.sub(ring.add(s1, s2), gamma), t)
            ctx.send(2, lam2, ring, tag="lam")
        else:
            j, other = me - 1, 3 - me
            ma, mb = np.broadcast_to(a.m, shape), np.broadcast_to(b.m, shape)
            y = ring.neg(ring.add(ring.mul(ma, lb[j]), ring.mul(mb, la[j])))
            ctx.send(other, ring.add(y, s1 if me == 1 else s2), ring, tag="y")
            if trunc:
                e = ctx.recv_array(0, shape, tag="e", ring=ring)
            if me == 2:
                lam2 = ctx.recv_array(0, shape, tag="lam", ring=ring)
            got = ctx.recv_array(other, shape, tag="y", ring=ring)
    lam = (t, lam2)
    if me == 0:
        return MShare(None, lam, ring, shape)
    own = ring.add(y, s1 if me == 1 else s2)
    c = ring.add(ring.mul(np.broadcast_to(a.m, shape), np.broadcast_to(b.m, shape)), ring.add(own, got))
    if not trunc:
        return MShare(c, lam, ring, shape)
    return MShare(exact_truncate(ring, ring.add(c, e), ctx.frac_bits), lam, ring, shape)


def aby2_mult_local(ctx: Party, a=None, b=None, shape=None, ring: Ring | None = None) -> MShare:
    """Sharing of a*b for a held by P1 and b by P2, with no online messages.

    The correlated product comes from the dealer, standing in for the
    oblivious-transfer step.
    """
    ring = ring or ctx.ring
    shape = tuple(shape)
    if ctx.fw.name != "aby2":
        raise ValueError("the local product is an aby2 protocol")
    with ctx.gate("multloc"):
        def pre():
            with ctx.phase("provider"):
                va = push(ctx, 1, 0, None if a is None else ring.reduce(a), shape, ring, tag="a")
                vb = push(ctx, 2, 0, None if b is None else ring.reduce(b), shape, ring, tag="b")
                z = ring.mul(va, vb) if ctx.is_dealer else None
                z1, z2 = dealer_share(ctx, z, shape, ring, name="z")
            return (_opt(ring.neg, z1), _opt(ring.neg, z2))

        lam = ctx.prep(pre)
        m = ring.zeros(shape) if ctx.me in ctx.fw.online and ctx.online_active else None
        return MShare(m, lam, ring, shape)
