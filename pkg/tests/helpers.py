"""Shared harness for running one operation over the simulator."""
from __future__ import annotations

import numpy as np

from maskmpc.ring import Ring
from maskmpc.runtime import run
from maskmpc.sharing import get_framework, reconstruct, share

FRAMEWORK_NAMES = ("astra", "aby2", "swift", "tetrad")
R64 = Ring(64)


def owner_of(fw: str) -> int:
    return get_framework(fw).online[0]


def run_op(fw: str, op, values, rings=None, *, ring_bits: int = 64, frac_bits: int = 13, owner=None,
           mode: str = "abort", seed: str = "0", script=None, record: bool = False):
    """Share values from one party, apply op, open every returned share.

    Returns (opened output at the first online party, session result).
    """
    ring = Ring(ring_bits)
    rings = rings or [ring] * len(values)
    owner = owner_of(fw) if owner is None else owner

    def program(ctx):
        with ctx.unmetered():
            xs = [share(ctx, owner, v if ctx.me == owner else None, shape=np.shape(v), ring=r)
                  for v, r in zip(values, rings)]
        out = op(ctx, *xs)
        with ctx.unmetered():
            if isinstance(out, tuple):
                return tuple(reconstruct(ctx, o, mode=mode) for o in out)
            return reconstruct(ctx, out, mode=mode)

    res = run(fw, program, ring_bits=ring_bits, frac_bits=frac_bits, seed=seed, script=script, record=record)
    return res.outputs[owner_of(fw)], res


def metered(fw: str, op, values, rings=None, **kw) -> dict:
    """Meter summary of op alone (input sharing and opening are unmetered)."""
    _, res = run_op(fw, op, values, rings, **kw)
    return res.meter.summary()


def signed_ints(ring: Ring, rng, bound: int, shape) -> np.ndarray:
    return ring.from_signed(rng.integers(-bound, bound, shape))
