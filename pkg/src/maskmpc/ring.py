"""Arithmetic over Z_2^l on numpy uint64 arrays, and fixed-point encoding.

A ring of width 1 is the boolean world: addition is XOR, multiplication is
AND and negation is the identity, so protocol code written for the
arithmetic ring runs unchanged on bits.
"""
from __future__ import annotations

import numpy as np

U64 = np.uint64


class Ring:
    """Z_2^bits with 1 <= bits <= 64. Values are uint64 arrays reduced by mask."""

    __slots__ = ("bits", "mask")

    def __init__(self, bits: int):
        if not 1 <= bits <= 64:
            raise ValueError(f"ring width must be in [1, 64], got {bits}")
        self.bits = bits
        self.mask = U64((1 << bits) - 1)

    def __repr__(self):
        return f"Ring({self.bits})"

    def __eq__(self, other):
        return isinstance(other, Ring) and other.bits == self.bits

    def __hash__(self):
        return hash(("ring", self.bits))

    @property
    def is_bool(self) -> bool:
        return self.bits == 1

    @property
    def nbytes(self) -> int:
        """Serialized width of one element."""
        return (self.bits + 7) // 8

    def reduce(self, a) -> np.ndarray:
        if isinstance(a, int):
            a = a & int(self.mask)
        return np.asarray(a, dtype=U64) & self.mask

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=U64)

    def add(self, a, b):
        return np.add(a, b, dtype=U64) & self.mask

    def sub(self, a, b):
        return np.subtract(a, b, dtype=U64) & self.mask

    def neg(self, a):
        return np.subtract(U64(0), a, dtype=U64) & self.mask

    def mul(self, a, b):
        return np.multiply(a, b, dtype=U64) & self.mask

    def const(self, c: int) -> np.uint64:
        return U64(int(c) & int(self.mask))

    def signed(self, a) -> np.ndarray:
        """Two's complement interpretation as int64."""
        a = np.asarray(a, dtype=U64) & self.mask
        if self.bits == 64:
            return a.view(np.int64)
        sign = U64(1 << (self.bits - 1))
        return (a ^ sign).astype(np.int64) - np.int64(1 << (self.bits - 1))

    def from_signed(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.int64).astype(U64) & self.mask

    def sra(self, a, shift: int) -> np.ndarray:
        """Arithmetic shift right of the signed interpretation."""
        return self.from_signed(self.signed(a) >> np.int64(shift))

    def srl(self, a, shift: int) -> np.ndarray:
        return (np.asarray(a, dtype=U64) & self.mask) >> U64(shift)

    def to_bits(self, a) -> np.ndarray:
        """Little-endian bit decomposition; adds a trailing axis of length bits."""
        a = np.asarray(a, dtype=U64)
        return (a[..., None] >> np.arange(self.bits, dtype=U64)) & U64(1)

    def from_bits(self, bits) -> np.ndarray:
        bits = np.asarray(bits, dtype=U64) & U64(1)
        weights = U64(1) << np.arange(bits.shape[-1], dtype=U64)
        return (bits * weights).sum(axis=-1, dtype=U64) & self.mask

    def msb(self, a) -> np.ndarray:
        return (np.asarray(a, dtype=U64) >> U64(self.bits - 1)) & U64(1)

    def uniform(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.integers(0, 1 << 64, size=shape, dtype=np.uint64) & self.mask

    def to_bytes(self, a) -> bytes:
        """Little-endian, nbytes per element; width-1 rings pack 8 bits per byte."""
        a = np.ascontiguousarray(np.asarray(a, dtype=U64) & self.mask).ravel()
        if self.bits == 1:
            return np.packbits(a.astype(np.uint8), bitorder="little").tobytes()
        raw = a.astype("<u8").view(np.uint8).reshape(-1, 8)
        return raw[:, : self.nbytes].tobytes()

    def from_bytes(self, data: bytes, shape) -> np.ndarray:
        count = int(np.prod(shape, dtype=np.int64))
        buf = np.frombuffer(data, dtype=np.uint8)
        if self.bits == 1:
            out = np.unpackbits(buf, count=count, bitorder="little").astype(U64)
            return out.reshape(shape)
        full = np.zeros((count, 8), dtype=np.uint8)
        full[:, : self.nbytes] = buf.reshape(count, self.nbytes)
        return full.view("<u8").astype(U64).reshape(shape) & self.mask


BOOL = Ring(1)
RING64 = Ring(64)


def truncate_local(ring: Ring, v, frac_bits: int) -> np.ndarray:
    """Drop the low frac_bits of a signed fixed-point value (sign preserving)."""
    return ring.sra(v, frac_bits)


class FixedPoint:
    """Encoding of reals as ring elements with frac_bits fractional bits."""

    def __init__(self, ring: Ring, frac_bits: int = 13):
        if frac_bits >= ring.bits:
            raise ValueError("fractional bits must be smaller than the ring width")
        self.ring = ring
        self.frac_bits = frac_bits
        self.scale = float(1 << frac_bits)

    def encode(self, f) -> np.ndarray:
        return self.ring.from_signed(np.rint(np.asarray(f, dtype=np.float64) * self.scale).astype(np.int64))

    def decode(self, raw) -> np.ndarray:
        return self.ring.signed(raw).astype(np.float64) / self.scale

    def ulp_diff(self, a, b) -> np.ndarray:
        """|signed(a) - signed(b)| in ulps, computed in the ring to survive wraparound."""
        return np.abs(self.ring.signed(self.ring.sub(self.ring.reduce(a), self.ring.reduce(b))))
