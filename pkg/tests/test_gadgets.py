import numpy as np
import pytest

from helpers import FRAMEWORK_NAMES, R64, metered, run_op
from maskmpc import gadgets, mult
from maskmpc.ring import BOOL, Ring

L = 64


def _grid(ring):
    a, b = np.meshgrid(np.arange(1 << ring.bits, dtype=np.uint64), np.arange(1 << ring.bits, dtype=np.uint64))
    return a.ravel(), b.ravel()


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_bitext_signs(fw):
    rng = np.random.default_rng(12)
    v = R64.uniform(rng, (10_000,))
    v[:2] = [0, R64.mask]
    out, _ = run_op(fw, gadgets.bitext, [v])
    assert out[0] == 0 and out[1] == 1
    assert np.array_equal(out, (R64.signed(v) < 0).astype(np.uint64))


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_bitext_ppa2(fw):
    rng = np.random.default_rng(13)
    v = R64.uniform(rng, (1000,))
    out, _ = run_op(fw, lambda ctx, x: gadgets.bitext(ctx, x, fan_in=2), [v])
    assert np.array_equal(out, R64.msb(v))


@pytest.mark.parametrize("fw,fan_in,rounds", [("astra", 4, 3), ("astra", 2, 6),
                                              ("tetrad", 4, 3), ("tetrad", 2, 6)])
def test_bitext_rounds(fw, fan_in, rounds):
    v = np.arange(4, dtype=np.uint64)
    assert metered(fw, lambda ctx, x: gadgets.bitext(ctx, x, fan_in=fan_in), [v])["online_rounds"] == rounds


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_eq_exhaustive_8_bits(fw):
    ring = Ring(8)
    a, b = _grid(ring)
    out, _ = run_op(fw, gadgets.eq, [a, b], ring_bits=8)
    assert np.array_equal(out, (a == b).astype(np.uint64))


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_eq_examples(fw):
    a = np.array([7, 2**63, 0], dtype=np.uint64)
    out, _ = run_op(fw, gadgets.eq, [a, a])
    assert out.tolist() == [1, 1, 1]
    out, _ = run_op(fw, gadgets.eq, [R64.add(a, 1), a])
    assert out.tolist() == [0, 0, 0]


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_bit2a(fw):
    rng = np.random.default_rng(14)
    b = rng.integers(0, 2, 10_000).astype(np.uint64)
    b[:2] = [0, 1]
    out, _ = run_op(fw, gadgets.bit2a, [b], [BOOL])
    assert np.array_equal(out, b)


def test_astra_bit2a_meter():
    b = np.ones(1, dtype=np.uint64)
    summary = metered("astra", gadgets.bit2a, [b], [BOOL])
    assert (summary["pre"], summary["online"], summary["online_rounds"]) == (L, 2 * L, 1)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_dbit2a_table_and_composition(fw):
    b1 = np.array([1, 1, 0, 0], dtype=np.uint64)
    b2 = np.array([1, 0, 1, 0], dtype=np.uint64)
    out, _ = run_op(fw, gadgets.dbit2a, [b1, b2], [BOOL, BOOL])
    assert out.tolist() == [1, 0, 0, 0]
    rng = np.random.default_rng(15)
    x, y = rng.integers(0, 2, (2, 1000)).astype(np.uint64)
    direct, _ = run_op(fw, gadgets.dbit2a, [x, y], [BOOL, BOOL])
    composed, _ = run_op(fw, lambda ctx, p, q: gadgets.bit2a(ctx, mult.mult(ctx, p, q)), [x, y],
                         [BOOL, BOOL])
    assert np.array_equal(direct, composed)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_dbit2a_over_many_masks_8_bits(fw):
    # each seed draws fresh masks; cover every bit pair under 64 mask draws
    b1 = np.tile(np.array([0, 0, 1, 1], dtype=np.uint64), 64)
    b2 = np.tile(np.array([0, 1, 0, 1], dtype=np.uint64), 64)
    for seed in ("a", "b"):
        out, _ = run_op(fw, gadgets.dbit2a, [b1, b2], [BOOL, BOOL], ring_bits=8, seed=seed)
        assert np.array_equal(out, b1 & b2)


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_bit_injection(fw):
    rng = np.random.default_rng(16)
    b = rng.integers(0, 2, 10_000).astype(np.uint64)
    v = R64.uniform(rng, (10_000,))
    out, _ = run_op(fw, lambda ctx, x, y: gadgets.bit_inj(ctx, x, y), [b, v], [BOOL, R64])
    assert np.array_equal(out, R64.mul(b, v))


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_double_bit_injection(fw):
    rng = np.random.default_rng(17)
    b1, b2 = rng.integers(0, 2, (2, 2000)).astype(np.uint64)
    v = R64.uniform(rng, (2000,))
    out, _ = run_op(fw, gadgets.dbit_inj, [b1, b2, v], [BOOL, BOOL, R64])
    assert np.array_equal(out, R64.mul(b1 & b2, v))


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_bit_inj_sum_meter_independent_of_length(fw):
    rng = np.random.default_rng(18)
    summaries = {}
    for m in (1, 64):
        b = rng.integers(0, 2, m).astype(np.uint64)
        v = R64.uniform(rng, (m,))
        out, res = run_op(fw, gadgets.bit_inj_sum, [b, v], [BOOL, R64])
        assert out == R64.reduce(R64.mul(b, v).sum(dtype=np.uint64))
        summaries[m] = res.meter.summary()["online"]
    assert summaries[1] == summaries[64]


@pytest.mark.parametrize("fw", FRAMEWORK_NAMES)
def test_a2b_and_back(fw):
    rng = np.random.default_rng(19)
    v = R64.uniform(rng, (1000,))
    v[0] = 0
    bits, _ = run_op(fw, gadgets.a2b, [v])
    assert not bits[0].any()
    assert np.array_equal(bits, R64.to_bits(v))
    back, _ = run_op(fw, lambda ctx, x: gadgets.b2a(ctx, gadgets.a2b(ctx, x)), [v])
    assert np.array_equal(back, v)


def test_aby2_b2a_meter():
    bits = np.ones((1, 64), dtype=np.uint64)
    summary = metered("aby2", gadgets.b2a, [bits], [BOOL])
    assert summary["online"] == 2 * L and summary["online_rounds"] == 1
