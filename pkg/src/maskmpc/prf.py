"""Shared-key setup, PRF sampling, zero sharings, hashing and commitments.

Every subset of parties that needs common randomness holds a 128-bit AES key.
A draw of n elements on stream s encrypts the blocks (s || c) for the next n
counter values c; each element keeps the low 64 bits of its block.
"""
from __future__ import annotations

import hashlib
import hmac
import itertools
import os
import struct
from typing import Iterable

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .ring import Ring

KEY_BYTES = 16
RECORD = struct.Struct("<B16s")


class KeyConfigError(Exception):
    pass


def subset_mask(parties: Iterable[int]) -> int:
    mask = 0
    for p in parties:
        mask |= 1 << p
    return mask


def mask_members(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(8) if mask >> i & 1)


def stream_id(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")


class KeyGraph:
    """Per-subset keys. A party view keeps only the subsets it belongs to."""

    def __init__(self, keys: dict[int, bytes]):
        for mask, key in keys.items():
            if len(key) != KEY_BYTES:
                raise KeyConfigError(f"key for subset {mask:#x} is {len(key)} bytes")
        self.keys = dict(keys)

    @classmethod
    def generate(cls, nodes: Iterable[int], seed: bytes | str | None = None) -> "KeyGraph":
        """All keys for every non-empty subset of nodes, derived from a master seed."""
        if seed is None:
            seed = os.environ.get("MPC_SEED", "0")
        if isinstance(seed, str):
            seed = seed.encode()
        nodes = sorted(set(nodes))
        keys = {}
        for size in range(1, len(nodes) + 1):
            for combo in itertools.combinations(nodes, size):
                mask = subset_mask(combo)
                keys[mask] = hmac.new(seed, b"key" + bytes([mask]), hashlib.sha256).digest()[:KEY_BYTES]
        return cls(keys)

    def view(self, party: int) -> "KeyGraph":
        return KeyGraph({m: k for m, k in self.keys.items() if m >> party & 1})

    def key(self, mask: int) -> bytes:
        try:
            return self.keys[mask]
        except KeyError:
            raise KeyConfigError(f"no key for subset {mask_members(mask)}") from None

    def has(self, mask: int) -> bool:
        return mask in self.keys

    def dumps(self) -> bytes:
        return b"".join(RECORD.pack(m, k) for m, k in sorted(self.keys.items()))

    @classmethod
    def loads(cls, data: bytes) -> "KeyGraph":
        if len(data) % RECORD.size:
            raise KeyConfigError("key file length is not a whole number of records")
        return cls(dict(RECORD.iter_unpack(data)))


def prf_blocks(key: bytes, stream: int, start: int, n: int) -> np.ndarray:
    """Low 64 bits of AES_key(stream || counter) for counters start..start+n-1."""
    blocks = np.empty((n, 2), dtype="<u8")
    blocks[:, 0] = stream
    blocks[:, 1] = np.arange(start, start + n, dtype=np.uint64)
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    out = np.frombuffer(enc.update(blocks.tobytes()) + enc.finalize(), dtype="<u8")
    return out[0::2].astype(np.uint64)


def sample_shared(keys: KeyGraph, subset: Iterable[int], stream: str, n: int,
                  ring: Ring, counters: dict | None = None) -> np.ndarray:
    """n ring elements that every holder of the subset key derives identically."""
    mask = subset_mask(subset)
    key = keys.key(mask)
    counters = {} if counters is None else counters
    sid = stream_id(stream)
    start = counters.get((mask, sid), 0)
    counters[(mask, sid)] = start + n
    return prf_blocks(key, sid, start, n) & ring.mask


class Sampler:
    """Stateful sampling front-end for one party.

    An omniscient sampler (the trusted dealer) holds every key and can draw on
    behalf of any subset.
    """

    def __init__(self, keys: KeyGraph, me: int, omniscient: bool = False):
        self.keys = keys
        self.me = me
        self.omniscient = omniscient
        self.counters: dict = {}

    def holds(self, subset: Iterable[int]) -> bool:
        return self.omniscient or self.me in set(subset)

    def draw(self, subset: Iterable[int], stream: str, shape, ring: Ring) -> np.ndarray | None:
        subset = tuple(subset)
        if not self.holds(subset):
            return None
        n = int(np.prod(shape, dtype=np.int64))
        return sample_shared(self.keys, subset, stream, n, ring, self.counters).reshape(shape)


def zero_shares(sampler: Sampler, trio: tuple[int, int, int], stream: str, shape, ring: Ring,
                extra: Iterable[int] = ()) -> dict[int, np.ndarray]:
    """Z_1 + Z_2 + Z_3 = 0 with Z_i known to trio member i (and to every extra party).

    r_i is drawn by the two trio members other than i, so Z_1 = r_3 - r_2,
    Z_2 = r_1 - r_3 and Z_3 = r_2 - r_1 are each computable by one member.
    """
    extra = tuple(extra)
    r = {}
    for i, p in enumerate(trio):
        others = tuple(q for q in trio if q != p) + extra
        r[i] = sampler.draw(others, f"{stream}/r{i}", shape, ring)
    out = {}
    for i, p in enumerate(trio):
        nxt, prv = r[(i + 2) % 3], r[(i + 1) % 3]
        if nxt is not None and prv is not None:
            out[p] = ring.sub(nxt, prv)
    return out


def digest(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def commit(value: bytes, rand: bytes) -> bytes:
    if len(rand) != 16:
        raise ValueError("commitment randomness must be 128 bits")
    return digest(value, rand)


def open_ok(com: bytes, value: bytes, rand: bytes) -> bool:
    return hmac.compare_digest(com, commit(value, rand))
