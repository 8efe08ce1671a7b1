import numpy as np
import pytest

from helpers import FRAMEWORK_NAMES, R64, run_op
from maskmpc.mult import scale_const_trunc
from maskmpc.ring import BOOL, FixedPoint, Ring
from maskmpc.runtime import run
from maskmpc.sharing import MShare, get_framework, joint_share, reconstruct, share, share_pre

FX = FixedPoint(R64, 13)


def _open_all(ctx, sh, mode="abort"):
    with ctx.unmetered():
        return reconstruct(ctx, sh, mode=mode)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
@pytest.mark.parametrize("ring", [R64, BOOL], ids=["arith", "bool"])
def test_share_round_trip_every_owner(fw, ring):
    rng = np.random.default_rng(3)
    value = ring.uniform(rng, (10_000,))
    for owner in get_framework(fw).parties:
        def program(ctx):
            sh = share(ctx, owner, value if ctx.me == owner else None, shape=value.shape, ring=ring)
            return _open_all(ctx, sh)

        res = run(fw, program)
        for p in get_framework(fw).parties:
            assert np.array_equal(res.outputs[p], value), (fw, owner, p)


@pytest.mark.parametrize("owner,bits", [(0, 128), (1, 64)])
def test_astra_share_cost(owner, bits):
    def program(ctx):
        share(ctx, owner, np.uint64(5) if ctx.me == owner else None, shape=(), ring=R64)

    assert run("astra", program).meter.total("online") == bits


def test_zero_with_zero_mask():
    def program(ctx):
        sh = share(ctx, 1, np.zeros(3, dtype=np.uint64) if ctx.me == 1 else None, shape=(3,))
        return sh

    res = run("astra", program)
    # m = v + total mask, so a zero value leaves m equal to the mask
    p1 = res.outputs[1]
    assert np.array_equal(p1.m, R64.add(res.outputs[0].lam[0], res.outputs[0].lam[1]))


def test_astra_joint_share_is_free():
    def program(ctx):
        v = np.uint64(9) if ctx.me in (1, 2) else None
        sh = joint_share(ctx, (1, 2), v, (), R64)
        return _open_all(ctx, sh)

    res = run("astra", program)
    assert res.meter.total("online") == 0 and res.meter.total("pre") == 0
    assert all(res.outputs[p] == 9 for p in (0, 1, 2))


def _pre_shared(fw, owners, value):
    def program(ctx):
        with ctx.gate("psh"):
            lam = ctx.prep(lambda: share_pre(ctx, owners, value if ctx.knows(owners) else None,
                                             value.shape, R64).lam)
            holds = ctx.me in ctx.fw.online
            sh = MShare(R64.zeros(value.shape) if holds else None, lam, R64, value.shape)
        return sh.lam, _open_all(ctx, sh)

    return run(fw, program)


def test_swift_pre_share_sets_component():
    value = np.array([7, 11], dtype=np.uint64)
    res = _pre_shared("swift", (1, 3), value)
    lam1, opened = res.outputs[1]
    assert np.array_equal(lam1[0], R64.neg(value))
    assert np.array_equal(opened, value)
    assert res.meter.total("pre") == 0


def test_tetrad_pre_share_with_helper_is_one_joint_send():
    value = np.array([7], dtype=np.uint64)
    res = _pre_shared("tetrad", (0, 3), value)
    assert np.array_equal(res.outputs[1][1], value)
    assert res.meter.total("pre") == 64
    assert res.meter.pair("pre", 0, 1) == 64


def _reconstruct_meter(fw, mode="abort"):
    def program(ctx):
        with ctx.unmetered():
            sh = share(ctx, 1, np.uint64(42) if ctx.me == 1 else None, shape=())
        return reconstruct(ctx, sh, mode=mode)

    return run(fw, program)


def test_astra_reconstruct_cost():
    res = _reconstruct_meter("astra")
    assert all(res.outputs[p] == 42 for p in (0, 1, 2))
    assert res.meter.total("online") == 3 * 64
    assert res.meter.online_rounds == 1


def test_tetrad_reconstruct_cost():
    res = _reconstruct_meter("tetrad")
    assert all(res.outputs[p] == 42 for p in (0, 1, 2, 3))
    assert res.meter.total("online") == 4 * 64
    assert res.meter.online_rounds == 1


@pytest.mark.parametrize("fw", ["swift", "tetrad"])
def test_fair_reconstruct_honest(fw):
    res = _reconstruct_meter(fw, mode="fair")
    assert set(res.outcomes.values()) == {"ok"}
    assert all(res.outputs[p] == 42 for p in get_framework(fw).parties)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_linear_combination(fw):
    a = np.array([3, 2**63 + 5], dtype=np.uint64)
    b = np.array([10, 7], dtype=np.uint64)
    out, _ = run_op(fw, lambda ctx, x, y: x.scale(2) + y.scale(3), [a, b])
    assert np.array_equal(out, R64.add(R64.mul(a, 2), R64.mul(b, 3)))


def test_add_const_keeps_mask():
    def program(ctx):
        sh = share(ctx, 1, np.uint64(4) if ctx.me == 1 else None, shape=())
        moved = sh.add_const(6)
        assert all(np.array_equal(x, y) for x, y in zip(sh.lam, moved.lam) if x is not None)
        assert moved.m is None or moved.m == R64.add(sh.m, 6)
        return _open_all(ctx, moved)

    assert run("astra", program).outputs[1] == 10


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_boolean_not(fw):
    bits = np.array([0, 1, 1, 0], dtype=np.uint64)
    out, _ = run_op(fw, lambda ctx, b: b.invert(), [bits], [BOOL])
    assert out.tolist() == [1, 0, 0, 1]


def test_mixed_rings_rejected():
    a = MShare(np.zeros(1, dtype=np.uint64), (None,), R64, (1,))
    b = MShare(np.zeros(1, dtype=np.uint64), (None,), Ring(16), (1,))
    with pytest.raises(TypeError):
        a + b


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_scale_const_trunc_examples(fw):
    vals = FX.encode(np.array([3.0, -1.25]))
    out, _ = run_op(fw, lambda ctx, v: scale_const_trunc(ctx, v, FX.encode(1.0)), [vals])
    assert np.max(FX.ulp_diff(out, vals)) <= 1
    out, _ = run_op(fw, lambda ctx, v: scale_const_trunc(ctx, v, FX.encode(0.5)), [vals])
    assert np.max(FX.ulp_diff(out, FX.encode(np.array([1.5, -0.625])))) <= 1


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_scale_const_trunc_random(fw):
    rng = np.random.default_rng(4)
    x = rng.integers(-2**40, 2**40, 10_000)
    out, _ = run_op(fw, lambda ctx, v: scale_const_trunc(ctx, v, FX.encode(0.375)), [R64.from_signed(x)])
    want = R64.from_signed((x * 3072) >> 13)
    assert np.max(FX.ulp_diff(out, want)) <= 1
