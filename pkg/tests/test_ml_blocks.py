import itertools

import numpy as np
import pytest

from helpers import FRAMEWORK_NAMES, R64, run_op
from maskmpc import ml_blocks as mb
from maskmpc.ring import BOOL, FixedPoint, Ring
from maskmpc.runtime import run
from maskmpc.sharing import share

FX = FixedPoint(R64, 13)


def _enc(*values):
    return FX.encode(np.array(values, dtype=np.float64))


def _plain_matmul(a, b):
    return R64.sra(R64.reduce(R64.mul(a[..., :, :, None], b[..., None, :, :]).sum(axis=-2, dtype=np.uint64)), 13)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_relu_and_drelu(fw):
    v = _enc(-3.5, 2.25, 0.0)
    out, _ = run_op(fw, mb.relu, [v])
    assert out.tolist() == _enc(0.0, 2.25, 0.0).tolist()
    bits, _ = run_op(fw, mb.drelu, [v])
    assert bits.tolist() == [0, 1, 1]


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_sigmoid_examples(fw):
    out, _ = run_op(fw, mb.sigmoid, [_enc(0.0, -1.0, 1.0, 0.25)])
    assert np.max(FX.ulp_diff(out, _enc(0.5, 0.0, 1.0, 0.75))) <= 1


def test_piecewise_segments():
    p = mb.Piecewise((-1.0, 0.0, 1.5), (0.25, 0.5, 2.0))
    y = _enc(-4.0, -1.0, -0.5, 0.7, 1.5, 9.0)
    out, _ = run_op("astra", lambda ctx, v: mb.piecewise(ctx, p, v), [y])
    assert FX.decode(out).tolist() == [0.0, 0.25, 0.25, 0.5, 2.0, 2.0]
    assert p(np.array([-4.0, 9.0])).tolist() == [0.0, 2.0]


def test_piecewise_rejects_unsorted_breakpoints():
    with pytest.raises(ValueError):
        mb.Piecewise((1.0, 0.0), (1.0, 2.0))


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_select_and_extrema(fw):
    x0, x1 = _enc(1.0, -2.0), _enc(3.0, -5.0)
    b = np.array([0, 1], dtype=np.uint64)
    out, _ = run_op(fw, mb.obv_select, [x0, x1, b], [R64, R64, BOOL])
    assert out.tolist() == [x0[0], x1[1]]
    out, _ = run_op(fw, mb.max2, [x0, x1])
    assert out.tolist() == _enc(3.0, -2.0).tolist()
    out, _ = run_op(fw, mb.min2, [x0, x0])
    assert out.tolist() == x0.tolist()
    x2 = _enc(2.0, -1.0)
    out, _ = run_op(fw, mb.max3, [x0, x1, x2])
    assert out.tolist() == _enc(3.0, -1.0).tolist()
    out, _ = run_op(fw, mb.min3, [x0, x1, x2])
    assert out.tolist() == _enc(1.0, -5.0).tolist()


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_argmin_examples(fw):
    hot, val = run_op(fw, mb.argmin, [R64.reduce([5, 1, 3])])[0]
    assert hot.tolist() == [0, 1, 0] and val == 1
    hot, val = run_op(fw, mb.argmax, [R64.reduce([4, 4, 4, 4, 4])])[0]
    assert hot.sum() == 1 and val == 4


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_argmin_exhaustive_four_entries(fw):
    ring = Ring(8)
    # small values keep differences inside the ring's signed range
    grid = np.array(list(itertools.product(range(-4, 4), repeat=4)))
    (hot, val), _ = run_op(fw, mb.argmin, [ring.from_signed(grid)], ring_bits=8, frac_bits=2)
    want = np.zeros_like(hot)
    want[np.arange(len(grid)), [mb.plain_argmin(row) for row in grid]] = 1
    assert np.array_equal(hot, want)
    assert np.array_equal(ring.signed(val), grid.min(axis=1))


def test_plain_argmin_ties_pick_the_last_index():
    assert mb.plain_argmin([2, 1, 1]) == 2
    assert mb.plain_argmin([0] * 5) == 4
    assert mb.plain_argmin([3]) == 0


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_matmul_identity_and_random(fw):
    rng = np.random.default_rng(20)
    eye = FX.encode(np.eye(8))
    b = FX.encode(rng.uniform(-2, 2, (8, 8)))
    out, _ = run_op(fw, mb.matmul, [eye, b])
    assert np.max(FX.ulp_diff(out, b)) <= 1
    exact, _ = run_op(fw, lambda ctx, x, y: mb.matmul(ctx, x, y, trunc=False), [R64.reduce(np.eye(8, dtype=np.uint64)), b])
    assert np.array_equal(exact, b)
    a = FX.encode(rng.uniform(-2, 2, (8, 8)))
    out, _ = run_op(fw, mb.matmul, [a, b])
    assert np.max(FX.ulp_diff(out, _plain_matmul(a, b))) <= 1


def test_im2col_lowering_3x3_by_2x2():
    x = np.arange(1, 10).reshape(1, 3, 3)
    cols = mb.im2col(x, 2)
    assert cols.tolist() == [[1, 2, 4, 5], [2, 3, 5, 6], [4, 5, 7, 8], [5, 6, 8, 9]]
    assert mb.conv_output_size(3, 2, 1, 0) == 2
    assert mb.conv_output_size(5, 3, 2, 1) == 3


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_conv2d_matches_lowered_product(fw):
    rng = np.random.default_rng(21)
    img = FX.encode(rng.uniform(-2, 2, (2, 4, 4)))
    ker = FX.encode(rng.uniform(-1, 1, (3, 2, 3, 3)))
    out, _ = run_op(fw, lambda ctx, x, k: mb.conv2d(ctx, x, k, stride=1, pad=1), [img, ker])
    cols = mb.im2col(img, 3, 1, 1)
    want = _plain_matmul(cols, ker.reshape(3, -1).T).T.reshape(3, 4, 4)
    assert out.shape == (3, 4, 4)
    assert np.max(FX.ulp_diff(out, want)) <= 1


def test_outputs_carry_fresh_masks():
    v = _enc(1.0, -1.0, 2.0)

    def program(ctx):
        x = share(ctx, 1, v if ctx.me == 1 else None, shape=v.shape)
        return x.lam, mb.relu(ctx, x).lam

    res = run("astra", program)
    before, after = res.outputs[0]
    assert not any(np.array_equal(b, a) for b, a in zip(before, after))
