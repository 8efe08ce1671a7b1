"""Composite operators for machine learning on masked sharings.

Comparisons use the sign bit, so operands must stay within
(-2^(l-2), 2^(l-2)). Shared tensors are MShares whose shape is the tensor
shape; fixed-point values carry ctx.frac_bits fractional bits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gadgets import bit_inj, bit_inj_sum, bitext, dbit_inj
from .mult import dotp, product
from .ring import BOOL, FixedPoint
from .sharing import MShare, concat, constant, stack
from .transport import Party


def _fixed(ctx: Party, ring=None) -> FixedPoint:
    return FixedPoint(ring or ctx.ring, ctx.frac_bits)


def _geq_bits(ctx: Party, diffs) -> MShare:
    """[d >= 0] for each difference, all in one bit extraction."""
    return bitext(ctx, stack(diffs, axis=-1)).invert()


# ---------------------------------------------------------------- activations

@dataclass(frozen=True)
class Piecewise:
    """Step function: 0 below breakpoints[0], values[i] from breakpoints[i] on."""
    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        if not self.breakpoints:
            raise ValueError("a step function needs at least one breakpoint")
        if len(self.values) != len(self.breakpoints):
            raise ValueError("one value per breakpoint")
        if any(hi <= lo for lo, hi in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    def __call__(self, y):
        """Plaintext reference on floats."""
        y = np.asarray(y, dtype=np.float64)
        out = np.zeros_like(y)
        for c, f in zip(self.breakpoints, self.values):
            out = np.where(y >= c, f, out)
        return out


def piecewise(ctx: Party, p: Piecewise, y: MShare) -> MShare:
    """sum_i [y >= c_i] * (f_i - f_{i-1}): one batched comparison and one bitInjS."""
    fx = _fixed(ctx, y.ring)
    bits = _geq_bits(ctx, [y.add_const(fx.encode(-c)) for c in p.breakpoints])
    steps = np.diff(np.concatenate([[0.0], np.asarray(p.values, dtype=np.float64)]))
    return bit_inj_sum(ctx, bits, constant(ctx, fx.encode(steps), ring=y.ring))


def drelu(ctx: Party, v: MShare) -> MShare:
    """Boolean [v >= 0]."""
    return bitext(ctx, v).invert()


def relu(ctx: Party, v: MShare) -> MShare:
    return bit_inj(ctx, drelu(ctx, v), v)


def sigmoid(ctx: Party, v: MShare) -> MShare:
    """Clipped linear: 0 below -1/2, v + 1/2 in between, 1 from 1/2 on.

    Equals [v >= -1/2](v + 1/2) + [v >= 1/2](1/2 - v), which is one bitInjS.
    """
    fx = _fixed(ctx, v.ring)
    half, neg_half = fx.encode(0.5), fx.encode(-0.5)
    bits = _geq_bits(ctx, [v.add_const(half), v.add_const(neg_half)])
    values = stack([v.add_const(half), (-v).add_const(half)], axis=-1)
    return bit_inj_sum(ctx, bits, values)


# ---------------------------------------------------------------- selection

def obv_select(ctx: Party, x0: MShare, x1: MShare, b: MShare) -> MShare:
    """x1 where b is set, else x0, as a freshly masked sharing."""
    return bit_inj(ctx, b, x1 - x0) + x0


def max2(ctx: Party, x1: MShare, x2: MShare) -> MShare:
    b = bitext(ctx, x1 - x2)
    return bit_inj(ctx, b, x2 - x1) + x1


def min2(ctx: Party, x1: MShare, x2: MShare) -> MShare:
    b = bitext(ctx, x1 - x2)
    return bit_inj(ctx, b, x1 - x2) + x2


def _max3_parts(ctx: Party, x1, x2, x3):
    g = _geq_bits(ctx, [x1 - x2, x1 - x3, x2 - x3])
    c12, c13, c23 = g[..., 0], g[..., 1], g[..., 2]
    return (c12, c13, x1), (c12.invert(), c23, x2), (c13.invert(), c23.invert(), x3)


def max3(ctx: Party, x1: MShare, x2: MShare, x3: MShare) -> MShare:
    """b1 b2 x1 + !b1 b3 x2 + !b2 !b3 x3 with the three products in one round."""
    parts = _max3_parts(ctx, x1, x2, x3)
    with ctx.round():
        terms = [dbit_inj(ctx, *p) for p in parts]
    return terms[0] + terms[1] + terms[2]


def min3(ctx: Party, x1: MShare, x2: MShare, x3: MShare) -> MShare:
    return -max3(ctx, -x1, -x2, -x3)


def _argmin(ctx: Party, x: MShare):
    """(one-hot boolean vector, minimum) over the last axis.

    Pairs compare with b = msb(x1 - x2), so equal values select the second.
    """
    m = x.shape[-1]
    if m == 1:
        return constant(ctx, np.ones(x.shape, dtype=np.uint64), ring=BOOL), x[..., 0]
    if m == 2:
        x1, x2 = x[..., 0], x[..., 1]
        b = bitext(ctx, x1 - x2)
        value = bit_inj(ctx, b, x1 - x2) + x2
        return stack([b, b.invert()], axis=-1), value
    if m == 3:
        x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
        lt = bitext(ctx, stack([x1 - x2, x1 - x3, x2 - x3], axis=-1))
        b12, b13, b23 = lt[..., 0], lt[..., 1], lt[..., 2]
        pairs = [(b12, b13, x1), (b12.invert(), b23, x2), (b13.invert(), b23.invert(), x3)]
        with ctx.round():
            hot = product(ctx, [stack([p[0] for p in pairs], axis=-1), stack([p[1] for p in pairs], axis=-1)],
                          name="onehot")
            terms = [dbit_inj(ctx, *p) for p in pairs]
        return hot, terms[0] + terms[1] + terms[2]
    half = (m + 1) // 2
    if m % 2 == 0:
        pair = x.map(lambda a: np.reshape(a, a.shape[:-1] + (2, half)) if np.ndim(a) else a,
                     x.shape[:-1] + (2, half))
        hot, vals = _argmin(ctx, pair)
        hot_lo, hot_hi = hot[..., 0, :], hot[..., 1, :]
        v_lo, v_hi = vals[..., 0], vals[..., 1]
    else:
        hot_lo, v_lo = _argmin(ctx, x[..., :half])
        hot_hi, v_hi = _argmin(ctx, x[..., half:])
    b = bitext(ctx, v_lo - v_hi)
    with ctx.round():
        value = bit_inj(ctx, b, v_lo - v_hi) + v_hi
        bb = b.map(lambda a: a[..., None] if np.ndim(a) else a, b.shape + (1,))
        picked_lo = product(ctx, [bb, hot_lo], name="onehot")
        picked_hi = product(ctx, [bb.invert(), hot_hi], name="onehot")
    return concat([picked_lo, picked_hi], axis=-1), value


def argmin(ctx: Party, x: MShare):
    """One-hot index of a smallest element of the last axis, and that element."""
    if x.shape[-1] < 1:
        raise ValueError("argmin of an empty vector")
    return _argmin(ctx, x)


def argmax(ctx: Party, x: MShare):
    """One-hot index of a largest element, via argmin of the negation."""
    hot, value = argmin(ctx, -x)
    return hot, -value


def plain_argmin(x) -> int:
    """Plaintext replay of the secure recursion's tie rule; returns the index."""
    x = list(x)
    m = len(x)
    if m == 1:
        return 0
    if m == 2:
        return 0 if x[0] < x[1] else 1
    if m == 3:
        b12, b13, b23 = x[0] < x[1], x[0] < x[2], x[1] < x[2]
        if b12 and b13:
            return 0
        if not b12 and b23:
            return 1
        return 2
    half = (m + 1) // 2
    lo, hi = plain_argmin(x[:half]), plain_argmin(x[half:])
    return lo if x[lo] < x[half + hi] else half + hi


# ---------------------------------------------------------------- tensors

def matmul(ctx: Party, a: MShare, b: MShare, trunc: bool = True) -> MShare:
    """(p x q) @ (q x r), or a matrix-vector product; one dot product per output."""
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    vector = len(b.shape) == 1
    rhs = b if vector else b.map(lambda t: np.swapaxes(t, 0, 1) if np.ndim(t) else t, b.shape[::-1])
    if vector:
        return dotp(ctx, a, rhs.map(lambda t: t[None, :] if np.ndim(t) else t, (1,) + rhs.shape), trunc)
    lhs = a.map(lambda t: t[:, None, :] if np.ndim(t) else t, (a.shape[0], 1, a.shape[1]))
    rhs = rhs.map(lambda t: t[None, :, :] if np.ndim(t) else t, (1,) + rhs.shape)
    return dotp(ctx, lhs, rhs, trunc)


def conv_output_size(width: int, kernel: int, stride: int, pad: int) -> int:
    span = width - kernel + 2 * pad
    if span < 0 or span % stride:
        raise ValueError(f"width {width}, kernel {kernel}, stride {stride}, pad {pad} do not tile")
    return span // stride + 1


def im2col_index(channels: int, height: int, width: int, kernel: int, stride: int = 1, pad: int = 0):
    """Flat indices into the padded (c, h, w) input: one row per output position."""
    out_h = conv_output_size(height, kernel, stride, pad)
    out_w = conv_output_size(width, kernel, stride, pad)
    ph, pw = height + 2 * pad, width + 2 * pad
    c, di, dj = np.meshgrid(np.arange(channels), np.arange(kernel), np.arange(kernel), indexing="ij")
    patch = (c * ph + di) * pw + dj
    oi, oj = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    start = (oi * stride) * pw + oj * stride
    return start.reshape(-1, 1) + patch.reshape(1, -1), (out_h, out_w)


def im2col(x, kernel: int, stride: int = 1, pad: int = 0):
    """Lower a (c, h, w) array or share to the (h'w', c k k) patch matrix."""
    c, h, w = x.shape
    idx, _ = im2col_index(c, h, w, kernel, stride, pad)

    def lower(a):
        a = np.broadcast_to(a, (c, h, w))
        if pad:
            a = np.pad(a, ((0, 0), (pad, pad), (pad, pad)))
        return np.asarray(a).reshape(-1)[idx]

    if isinstance(x, MShare):
        return x.map(lower, idx.shape)
    return lower(x)


def conv2d(ctx: Party, x: MShare, kernels: MShare, stride: int = 1, pad: int = 0, trunc: bool = True) -> MShare:
    """x: (c, h, w); kernels: (o, c, k, k). Returns (o, h', w') via im2col and one matmul."""
    o, c, k, k2 = kernels.shape
    if k != k2 or c != x.shape[0]:
        raise ValueError(f"conv shape mismatch: input {x.shape}, kernels {kernels.shape}")
    cols = im2col(x, k, stride, pad)
    _, (out_h, out_w) = im2col_index(c, x.shape[1], x.shape[2], k, stride, pad)
    flat = kernels.reshape(o, c * k * k)
    flat_t = flat.map(lambda t: np.swapaxes(t, 0, 1), (c * k * k, o))
    out = matmul(ctx, cols, flat_t, trunc)
    return out.map(lambda t: np.swapaxes(t, 0, 1).reshape(o, out_h, out_w), (o, out_h, out_w))
