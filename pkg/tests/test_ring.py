import numpy as np
import pytest

from maskmpc.prf import (KeyConfigError, KeyGraph, Sampler, commit, open_ok, sample_shared, subset_mask,
                         zero_shares)
from maskmpc.ring import BOOL, FixedPoint, Ring, truncate_local

R64 = Ring(64)


def test_ring_wraps_and_signs():
    r = Ring(8)
    assert r.add(np.uint64(250), np.uint64(10)) == 4
    assert r.mul(np.uint64(16), np.uint64(16)) == 0
    assert r.signed(np.uint64(255)) == -1
    assert r.from_signed(np.array([-1]))[0] == 255
    assert r.msb(np.array([127, 128], dtype=np.uint64)).tolist() == [0, 1]


def test_bits_round_trip():
    rng = np.random.default_rng(0)
    v = R64.uniform(rng, (100,))
    assert np.array_equal(R64.from_bits(R64.to_bits(v)), v)
    assert R64.to_bits(v).shape == (100, 64)


def test_fixed_point_encoding():
    fx = FixedPoint(R64, 13)
    assert fx.encode(1.0) == 1 << 13
    assert fx.decode(fx.encode(-2.5)) == -2.5
    assert fx.ulp_diff(fx.encode(0.0), R64.from_signed(np.array([-1])))[0] == 1


def test_truncate_local_unit_and_sign():
    assert truncate_local(R64, np.uint64(1 << 13), 13) == 1
    minus = R64.from_signed(np.array([-(1 << 13)]))
    assert truncate_local(R64, minus, 13)[0] == R64.from_signed(np.array([-1]))[0]


def test_truncate_local_matches_native_shift():
    rng = np.random.default_rng(1)
    v = R64.uniform(rng, (10_000,))
    want = R64.from_signed(R64.signed(v) >> 13)
    assert np.array_equal(truncate_local(R64, v, 13), want)


def test_same_key_and_counter_agree():
    keys = KeyGraph.generate(range(4), "seed")
    a = Sampler(keys.view(1), 1).draw((1, 2), "lambda", (16,), R64)
    b = Sampler(keys.view(2), 2).draw((1, 2), "lambda", (16,), R64)
    assert np.array_equal(a, b)


def test_subset_key_is_private():
    keys = KeyGraph.generate(range(4), "seed")
    view3 = keys.view(3)
    assert not view3.has(subset_mask((0, 1, 2)))
    with pytest.raises(KeyConfigError):
        sample_shared(view3, (0, 1, 2), "lambda", 4, R64)
    assert Sampler(view3, 3).draw((0, 1, 2), "lambda", (4,), R64) is None


def test_streams_are_distinct_and_uniform():
    keys = KeyGraph.generate(range(3), "seed")
    a = sample_shared(keys, (0, 1), "lambda", 10_000, R64)
    b = sample_shared(keys, (0, 1), "zero", 10_000, R64)
    assert not np.array_equal(a, b)
    for draws in (a, b):
        counts = np.bincount((draws >> np.uint64(60)).astype(np.int64), minlength=16)
        chi2 = ((counts - 625.0) ** 2 / 625.0).sum()
        assert chi2 < 37.7  # 99.9th percentile, 15 degrees of freedom


def test_key_file_round_trip():
    keys = KeyGraph.generate(range(3), "x").view(1)
    assert KeyGraph.loads(keys.dumps()).keys == keys.keys
    with pytest.raises(KeyConfigError):
        KeyGraph.loads(b"\x00" * 5)


def _zero_outputs(ring, keys, stream, calls=1):
    trio = (1, 2, 3)
    samplers = {p: Sampler(keys.view(p), p) for p in trio}
    out = []
    for _ in range(calls):
        parts = {}
        for p in trio:
            parts.update(zero_shares(samplers[p], trio, stream, (256,), ring))
        out.append(parts)
    return out


def test_zero_shares_sum_to_zero():
    keys = KeyGraph.generate(range(4), "z")
    (parts,) = _zero_outputs(R64, keys, "zero")
    assert np.all(R64.add(R64.add(parts[1], parts[2]), parts[3]) == 0)


def test_zero_shares_xor_over_bits():
    keys = KeyGraph.generate(range(4), "z")
    (parts,) = _zero_outputs(BOOL, keys, "zero")
    assert np.all(parts[1] ^ parts[2] ^ parts[3] == 0)


def test_zero_shares_are_fresh_per_call():
    keys = KeyGraph.generate(range(4), "z")
    first, second = _zero_outputs(R64, keys, "zero", calls=2)
    assert not np.array_equal(first[1], second[1])


def test_commitments():
    rand = bytes(range(16))
    com = commit(b"value", rand)
    assert open_ok(com, b"value", rand)
    assert not open_ok(com, b"valuf", rand)
    rng = np.random.default_rng(2)
    digests = {commit(b"same", rng.bytes(16)) for _ in range(1000)}
    assert len(digests) == 1000
