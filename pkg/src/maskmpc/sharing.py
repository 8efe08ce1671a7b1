"""Masked sharings for the four frameworks and their basic protocols.

A value v is held as m = v + lambda, where lambda = sum of components. The
framework descriptor says which parties hold m and each lambda component;
everything else is generic. Component holder sets double as the layout of
helper additive sharings (the <.> sharings), so one descriptor serves both.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prf import commit, digest, open_ok
from .ring import BOOL, Ring
from .transport import FairBottom, Party


@dataclass(frozen=True)
class Framework:
    name: str
    parties: tuple
    online: tuple
    lam: tuple
    helper: int | None = None
    dealer: int | None = None
    malicious: bool = False

    @property
    def nodes(self) -> tuple:
        return self.parties + ((self.dealer,) if self.dealer is not None else ())

    @property
    def ncomp(self) -> int:
        return len(self.lam)

    def comp_for_pair(self, pair) -> int:
        """Index of the component whose online holders are exactly pair."""
        pair = set(pair)
        for j, holders in enumerate(self.lam):
            if set(holders) - {self.helper} == pair:
                return j
        raise ValueError(f"{self.name}: no mask component held by exactly {sorted(pair)}")


ASTRA = Framework("astra", (0, 1, 2), (1, 2), ((0, 1), (0, 2)), helper=0)
ABY2 = Framework("aby2", (1, 2), (1, 2), ((1,), (2,)), dealer=0)
SWIFT = Framework("swift", (1, 2, 3), (1, 2, 3), ((1, 3), (2, 3), (1, 2)), dealer=0, malicious=True)
TETRAD = Framework("tetrad", (0, 1, 2, 3), (1, 2, 3), ((0, 1, 3), (0, 2, 3), (0, 1, 2)),
                   helper=0, malicious=True)

FRAMEWORKS = {fw.name: fw for fw in (ASTRA, ABY2, SWIFT, TETRAD)}


def get_framework(name: str) -> Framework:
    try:
        return FRAMEWORKS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown framework {name!r}; choose from {sorted(FRAMEWORKS)}") from None


# ---------------------------------------------------------------- share type

class MShare:
    """One party's view of a masked sharing. Absent fields are None."""

    __slots__ = ("m", "lam", "ring", "shape")

    def __init__(self, m, lam, ring: Ring, shape):
        self.m = m
        self.lam = tuple(lam)
        self.ring = ring
        self.shape = tuple(shape)

    def __repr__(self):
        held = [j for j, c in enumerate(self.lam) if c is not None]
        return f"MShare(shape={self.shape}, ring={self.ring.bits}, m={'yes' if self.m is not None else 'no'}, lam={held})"

    def _zip(self, other, op):
        if not isinstance(other, MShare):
            raise TypeError("expected MShare")
        if other.ring != self.ring:
            raise TypeError("mixed rings")
        m = None if self.m is None or other.m is None else op(self.m, other.m)
        lam = tuple(None if a is None or b is None else op(a, b) for a, b in zip(self.lam, other.lam))
        return MShare(m, lam, self.ring, np.broadcast_shapes(self.shape, other.shape))

    def __add__(self, other):
        return self._zip(other, self.ring.add)

    def __sub__(self, other):
        return self._zip(other, self.ring.sub)

    def __neg__(self):
        r = self.ring
        return MShare(None if self.m is None else r.neg(self.m),
                      tuple(None if c is None else r.neg(c) for c in self.lam), r, self.shape)

    def scale(self, c):
        """Multiply by a public constant (int or array broadcastable to the shape)."""
        r = self.ring
        c = r.reduce(c)
        shape = np.broadcast_shapes(self.shape, np.shape(c))
        return MShare(None if self.m is None else r.mul(self.m, c),
                      tuple(None if x is None else r.mul(x, c) for x in self.lam), r, shape)

    def add_const(self, c):
        r = self.ring
        c = r.reduce(c)
        shape = np.broadcast_shapes(self.shape, np.shape(c))
        m = None if self.m is None else r.add(self.m, c)
        lam = tuple(None if x is None else np.broadcast_to(x, shape) for x in self.lam)
        return MShare(m, lam, r, shape)

    def invert(self):
        """Boolean NOT."""
        return self.add_const(1)

    def map(self, fn, shape=None):
        """Apply a linear index operation (reshape, slicing, stacking helpers) to every field."""
        m = None if self.m is None else fn(self.m)
        lam = tuple(None if c is None else fn(c) for c in self.lam)
        if shape is None:
            shape = fn(np.empty(self.shape, dtype=np.uint8)).shape
        return MShare(m, lam, self.ring, shape)

    def __getitem__(self, idx):
        return self.map(lambda a: np.asarray(a)[idx] if np.ndim(a) else a)

    def reshape(self, *shape):
        return self.map(lambda a: np.reshape(a, shape))

    def sum(self, axis=-1):
        r = self.ring
        return self.map(lambda a: r.reduce(np.asarray(a).sum(axis=axis, dtype=np.uint64)))

    def to_bytes(self, fw: Framework) -> bytes:
        """Serialization: framework tag, world, then m and held components ascending."""
        world = 1 if self.ring.is_bool else 0
        out = bytes([list(FRAMEWORKS).index(fw.name), world])
        for part in (self.m,) + self.lam:
            if part is not None:
                out += self.ring.to_bytes(part)
        return out


def stack(shares, axis=0) -> MShare:
    """Stack same-shaped shares along a new axis."""
    first = shares[0]
    m = None if any(s.m is None for s in shares) else np.stack([s.m for s in shares], axis=axis)
    lam = []
    for j in range(len(first.lam)):
        parts = [s.lam[j] for s in shares]
        lam.append(None if any(p is None for p in parts) else
                   np.stack([np.broadcast_to(p, first.shape) for p in parts], axis=axis))
    shape = list(first.shape)
    shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, len(shares))
    return MShare(m, lam, first.ring, shape)


def concat(shares, axis=-1) -> MShare:
    first = shares[0]
    m = None if any(s.m is None for s in shares) else np.concatenate(
        [np.broadcast_to(s.m, s.shape) for s in shares], axis=axis)
    lam = []
    for j in range(len(first.lam)):
        parts = [s.lam[j] for s in shares]
        lam.append(None if any(p is None for p in parts) else
                   np.concatenate([np.broadcast_to(p, s.shape) for p, s in zip(parts, shares)], axis=axis))
    shape = np.concatenate([np.empty(s.shape, dtype=np.uint8) for s in shares], axis=axis).shape
    return MShare(m, lam, first.ring, shape)


# ---------------------------------------------------------------- helpers

def _fw(ctx: Party) -> Framework:
    return ctx.fw


def holds_m(ctx: Party) -> bool:
    return ctx.me in ctx.fw.online and ctx.online_active


def constant(ctx: Party, value, shape=None, ring: Ring | None = None) -> MShare:
    """Public constant: m = value, zero mask."""
    ring = ring or ctx.ring
    value = ring.reduce(value)
    shape = np.shape(value) if shape is None else tuple(shape)
    fw = _fw(ctx)
    m = np.broadcast_to(value, shape).copy() if holds_m(ctx) else None
    lam = tuple(ring.zeros(shape) if ctx.knows(h) else None for h in fw.lam)
    return MShare(m, lam, ring, shape)


def fresh_mask(ctx: Party, shape, ring: Ring | None = None, extra=(), name: str = "lam") -> tuple:
    """A random mask; component j is drawn by its holders plus `extra`."""
    fw = _fw(ctx)
    return tuple(ctx.sample(set(h) | set(extra), shape, ring, name=f"{name}{j}") for j, h in enumerate(fw.lam))


def mask_total(ctx: Party, lam, ring: Ring):
    """Full mask if every component is known here, else None."""
    if any(c is None for c in lam):
        return None
    total = lam[0]
    for c in lam[1:]:
        total = ring.add(total, c)
    return total


def zero_lam(ctx: Party, shape, ring: Ring) -> list:
    return [ring.zeros(shape) if ctx.knows(h) else None for h in _fw(ctx).lam]


# ---------------------------------------------------------------- input sharing

def share(ctx: Party, owner: int, value=None, shape=None, ring: Ring | None = None) -> MShare:
    """Share owner's input. Every party calls this; only the owner passes value."""
    ring = ring or ctx.ring
    fw = _fw(ctx)
    if ctx.me == owner and value is not None:
        value = ring.reduce(value)
        shape = value.shape if shape is None else tuple(shape)
    shape = tuple(shape)
    with ctx.gate("share"):
        lam = ctx.prep(lambda: fresh_mask(ctx, shape, ring, extra=(owner,)))
        if not ctx.online_active:
            return MShare(None, lam, ring, shape)
        m = None
        if ctx.me == owner:
            m = ring.add(value, mask_total(ctx, lam, ring))
        if fw.name in ("astra", "aby2", "tetrad"):
            if ctx.me == owner:
                for p in fw.online:
                    if p != owner:
                        ctx.send(p, m, ring, tag="m")
            elif ctx.me in fw.online:
                m = ctx.recv_array(owner, shape, tag="m", ring=ring)
            if fw.name == "tetrad" and ctx.me in fw.online:
                for p in fw.online:
                    if p != ctx.me:
                        ctx.hash_send(p, ("sh-consistency",), m)
                        ctx.hash_expect(p, ("sh-consistency",), m)
        else:
            relay = 1 if owner != 1 else 2
            if ctx.me == owner:
                ctx.send(relay, m, ring, tag="m")
            elif ctx.me == relay:
                m = ctx.recv_array(owner, shape, tag="m", ring=ring)
            for p in fw.online:
                if p not in (owner, relay):
                    got = ctx.jsnd(relay, owner, p, m, shape, ring, tag="m-relay")
                    if ctx.me == p:
                        m = got
        if ctx.me not in fw.online:
            m = None
        return MShare(m, lam, ring, shape)


def joint_share(ctx: Party, pair, value, shape, ring: Ring | None = None) -> MShare:
    """Online joint sharing of a value known to both parties of pair."""
    ring = ring or ctx.ring
    fw = _fw(ctx)
    pair = tuple(sorted(pair))
    with ctx.gate("jsh"):
        lam = ctx.prep(lambda: joint_share_mask(ctx, pair, shape, ring))
        if not ctx.online_active:
            return MShare(None, lam, ring, shape)
        return MShare(joint_share_online(ctx, pair, value, lam, shape, ring), lam, ring, shape)


def joint_share_mask(ctx: Party, pair, shape, ring: Ring) -> tuple:
    """Preprocessing of an online joint sharing: both sharers learn the whole mask."""
    fw = _fw(ctx)
    if fw.name in ("astra", "aby2"):
        if set(pair) != {1, 2}:
            raise ValueError(f"{fw.name}: online joint sharing is defined for (P1, P2) only")
        return tuple(zero_lam(ctx, shape, ring))
    j = fw.comp_for_pair(pair)
    lam = zero_lam(ctx, shape, ring)
    lam[j] = ctx.sample(fw.lam[j], shape, ring, name="jsh")
    return tuple(lam)


def joint_share_online(ctx: Party, pair, value, lam, shape, ring: Ring):
    """m for an online joint sharing; the third online party gets it by joint-send."""
    fw = _fw(ctx)
    if fw.name in ("astra", "aby2"):
        return ring.reduce(value) if ctx.me in fw.online else None
    m = None
    if ctx.me in pair:
        m = ring.add(value, lam[fw.comp_for_pair(pair)])
    (rest,) = [p for p in fw.online if p not in pair]
    sender = min(p for p in pair if p != 3) if any(p != 3 for p in pair) else pair[0]
    checker = [p for p in pair if p != sender][0]
    got = ctx.jsnd(sender, checker, rest, m, shape, ring, tag="jsh", deferred=(rest == 3))
    if ctx.me == rest:
        m = got
    return m if ctx.me in fw.online else None


def share_pre(ctx: Party, owners, value, shape, ring: Ring | None = None) -> MShare:
    """Preprocessing-time sharing (m = 0) of a value known to every party in owners.

    Call inside a gate's preprocessing. One owner may be the helper P0.
    """
    ring = ring or ctx.ring
    fw = _fw(ctx)
    owners = tuple(sorted(set(owners)))
    knows_v = ctx.knows(owners)
    value = ring.reduce(value) if knows_v else None
    lam = zero_lam(ctx, shape, ring)
    m = ring.zeros(shape) if ctx.knows(fw.online) else None
    neg = ring.neg(value) if knows_v else None

    if fw.name == "swift" and len(owners) == 2:
        j = fw.comp_for_pair(owners)
        if ctx.knows(fw.lam[j]):
            lam[j] = neg
    elif fw.name == "tetrad" and len(owners) == 2 and 0 in owners:
        other = [p for p in owners if p != 0][0]
        sampled, target, dest = {1: (0, 2, 2), 2: (2, 1, 3), 3: (1, 0, 1)}[other]
        lam[sampled] = ctx.sample(fw.lam[sampled], shape, ring, name="pjsh")
        val = ring.sub(neg, lam[sampled]) if knows_v else None
        got = ctx.jsnd(0, other, dest, val, shape, ring, tag="pjsh")
        if ctx.knows(fw.lam[target]):
            lam[target] = val if knows_v else got
    elif fw.name == "astra":
        if set(owners) == {1, 2}:
            raise ValueError("astra: use joint_share for values known to P1, P2")
        owner = owners[0]
        if owner == 0 or set(owners) == {0, 1}:
            lam[0] = ctx.sample((0, 1), shape, ring, name="psh")
            val = ring.sub(neg, lam[0]) if knows_v else None
            if ctx.me == 0:
                ctx.send(2, val, ring, tag="psh")
            elif ctx.me == 2:
                val = ctx.recv_array(0, shape, tag="psh", ring=ring)
            if ctx.knows(fw.lam[1]):
                lam[1] = val
        elif owner == 2 or set(owners) == {0, 2}:
            lam[1] = ctx.sample((0, 2), shape, ring, name="psh")
            val = ring.sub(neg, lam[1]) if knows_v else None
            if ctx.me == 0:
                ctx.send(1, val, ring, tag="psh")
            elif ctx.me == 1:
                val = ctx.recv_array(0, shape, tag="psh", ring=ring)
            if ctx.knows(fw.lam[0]):
                lam[0] = val
        else:
            raise ValueError(f"astra: unsupported preprocessing sharers {owners}")
    elif fw.name == "aby2":
        (owner,) = owners
        other = 3 - owner
        oj, xj = owner - 1, other - 1
        lam[xj] = ctx.sample((1, 2), shape, ring, name="psh")
        if ctx.knows((owner,)):
            lam[oj] = ring.sub(neg, lam[xj])
        lam = [c if ctx.knows(fw.lam[j]) else None for j, c in enumerate(lam)]
    elif fw.name == "swift" and len(owners) == 1:
        owner = owners[0]
        sampled_a, sampled_b, target, dest = {1: (0, 1, 2, 2), 2: (1, 0, 2, 1), 3: (1, 2, 0, 1)}[owner]
        holders_a = set(fw.lam[sampled_a]) | {owner}
        lam[sampled_a] = ctx.sample(holders_a, shape, ring, name="psh-a")
        lam[sampled_b] = ctx.sample(fw.parties, shape, ring, name="psh-b")
        val = None
        if knows_v:
            val = ring.sub(ring.sub(neg, lam[sampled_a]), lam[sampled_b])
        if ctx.me == owner:
            ctx.send(dest, val, ring, tag="psh")
        elif ctx.me == dest:
            val = ctx.recv_array(owner, shape, tag="psh", ring=ring)
        lam[target] = val if ctx.knows(fw.lam[target]) else None
        lam = [c if ctx.knows(fw.lam[j]) else None for j, c in enumerate(lam)]
    else:
        raise ValueError(f"{fw.name}: unsupported preprocessing sharers {owners}")
    return MShare(m if ctx.online_active else None, lam, ring, shape)


# ---------------------------------------------------------------- reconstruction

def _missing_plan(fw: Framework):
    """(receiver, component index or 'm', value sender, checker) per missing share."""
    if fw.name == "astra":
        return [(0, "m", 1, None), (1, 1, 2, None), (2, 0, 1, None)]
    if fw.name == "aby2":
        return [(1, 1, 2, None), (2, 0, 1, None)]
    if fw.name == "swift":
        return [(2, 0, 1, 3), (1, 1, 2, 3), (3, 2, 1, 2)]
    return [(2, 0, 1, 0), (3, 2, 2, 0), (1, 1, 3, 0), (0, "m", 1, 2)]


def _field(sh: MShare, which):
    return sh.m if which == "m" else sh.lam[which]


def _open_value(ctx: Party, sh: MShare, missing) -> np.ndarray | None:
    """v = m - sum(lambda) once the missing piece is filled in."""
    r = sh.ring
    m = sh.m if sh.m is not None else (missing if ctx.me not in ctx.fw.online else None)
    lam = list(sh.lam)
    for j, c in enumerate(lam):
        if c is None:
            lam[j] = missing
    if m is None or any(c is None for c in lam):
        return None
    return r.sub(m, mask_total(ctx, lam, r))


def reconstruct(ctx: Party, sh: MShare, mode: str = "abort", receivers=None):
    """Open sh to receivers (default: all parties).

    abort mode runs the pending verification before releasing the value; fair
    mode first agrees on aliveness, then uses openings that cannot be blocked
    by a single corrupt party.
    """
    fw = _fw(ctx)
    receivers = tuple(fw.parties if receivers is None else receivers)
    if mode == "fair" and fw.malicious:
        return _fair_reconstruct(ctx, sh, receivers)
    with ctx.gate("rec"):
        if ctx.is_dealer or not ctx.online_active:
            return None
        missing = None
        with ctx.round():
            missing = _run_plan(ctx, fw, sh, receivers)
        if fw.malicious:
            ctx.verify()
        if ctx.me not in receivers:
            return None
        return _open_value(ctx, sh, missing)


def _run_plan(ctx: Party, fw, sh: MShare, receivers):
    missing = None
    for recv, which, sender, checker in _missing_plan(fw):
        if recv not in receivers:
            continue
        if checker is None:
            if ctx.me == sender:
                ctx.send(recv, _field(sh, which), sh.ring, tag="rec")
            elif ctx.me == recv:
                missing = ctx.recv_array(sender, sh.shape, tag="rec", ring=sh.ring)
        else:
            got = ctx.jsnd(sender, checker, recv, _field(sh, which) if ctx.me in (sender, checker) else None,
                           sh.shape, sh.ring, tag="rec")
            if ctx.me == recv:
                missing = got
    return missing


def aliveness(ctx: Party):
    """Run pending checks, then agree on continue/abort by majority."""
    fw = _fw(ctx)
    try:
        ok = ctx.verify()
    except Exception as exc:  # SessionAborted: we vote abort and let the majority decide
        from .transport import SessionAborted
        if not isinstance(exc, SessionAborted):
            raise
        ok = False
    votes = [ok]
    for p in fw.parties:
        if p != ctx.me:
            ctx.send(p, b"\x01" if ok else b"\x00", tag="alive")
    for p in fw.parties:
        if p != ctx.me:
            got = ctx.recv(p, tag="alive")
            votes.append(got == b"\x01")
    if 2 * sum(votes) <= len(votes):
        raise FairBottom("aliveness majority is abort")


def commit_pre(ctx: Party, sh: MShare) -> dict:
    """SWIFT preprocessing for fair opening: each pair commits to the share the third lacks.

    Returns {component: (commitment words, randomness)} as known to this party.
    """
    fw = _fw(ctx)
    r = sh.ring
    out = {}
    for recv, which, sender, checker in _missing_plan(fw):
        holders = (sender, checker)
        rand = ctx.sample(holders, (2,), Ring(64), name=f"rand{which}")
        com = None
        if ctx.me in holders:
            com = np.frombuffer(commit(r.to_bytes(_field(sh, which)), rand.astype("<u8").tobytes()),
                                dtype="<u8").astype(np.uint64)
        got = ctx.jsnd(sender, checker, recv, com, (4,), Ring(64), tag="com")
        out[which] = (got if ctx.me == recv else com, rand)
    return out


def _fair_reconstruct(ctx: Party, sh: MShare, receivers):
    fw = _fw(ctx)
    with ctx.gate("frec"):
        coms = ctx.prep(lambda: commit_pre(ctx, sh)) if fw.name == "swift" else None
        if ctx.is_dealer or not ctx.online_active:
            return None
        aliveness(ctx)
        ctx.finalized = True
        missing = None
        with ctx.round():
            for recv, which, sender, checker in _missing_plan(fw):
                if recv not in receivers:
                    continue
                if fw.name == "swift":
                    got = _fair_open_pair(ctx, sh, recv, which, (sender, checker), coms)
                else:
                    got = _fair_open_trio(ctx, sh, recv, which)
                if ctx.me == recv:
                    missing = got
        if ctx.me not in receivers:
            return None
        return _open_value(ctx, sh, missing)


def _fair_open_pair(ctx: Party, sh: MShare, recv: int, which, holders, coms):
    """Both holders open the committed share; the receiver keeps the first valid one."""
    r = sh.ring
    if ctx.me in holders:
        ctx.send(recv, _field(sh, which), r, tag="open")
        ctx.send(recv, coms[which][1], Ring(64), tag="open-rand")
        return None
    if ctx.me != recv:
        return None
    com = coms[which][0].astype("<u8").tobytes()
    found = None
    for h in holders:
        value = ctx.recv(h, tag="open")
        rand = ctx.recv(h, tag="open-rand")
        if found is None and _valid_opening(r, sh.shape, com, value, rand):
            found = value & r.mask
    if found is None:
        raise FairBottom("no valid opening")
    return found


def _fair_open_trio(ctx: Party, sh: MShare, recv: int, which):
    """Two holders send the share and the third a hash of it."""
    fw = _fw(ctx)
    r = sh.ring
    owners = fw.online if which == "m" else fw.lam[which]
    holders = [p for p in fw.parties if p != recv and p in owners]
    senders, hasher = holders[:2], holders[2]
    if ctx.me in senders:
        ctx.send(recv, _field(sh, which), r, tag="fopen")
    elif ctx.me == hasher:
        ctx.send(recv, digest(r.to_bytes(_field(sh, which))), tag="fopen-hash")
    if ctx.me != recv:
        return None
    vals = [ctx.recv(p, tag="fopen") for p in senders]
    h = ctx.recv(hasher, tag="fopen-hash")
    vals = [v & r.mask if isinstance(v, np.ndarray) and v.shape == sh.shape else None for v in vals]
    if vals[0] is not None and vals[1] is not None and np.array_equal(vals[0], vals[1]):
        return vals[0]
    for v in vals:
        if v is not None and digest(r.to_bytes(v)) == h:
            return v
    raise FairBottom("no consistent majority for the missing share")


def _valid_opening(r: Ring, shape, com: bytes, value, rand) -> bool:
    if not isinstance(value, np.ndarray) or not isinstance(rand, np.ndarray):
        return False
    if value.shape != tuple(shape) or rand.shape != (2,):
        return False
    return open_ok(com, r.to_bytes(value & r.mask), rand.astype("<u8").tobytes())


# ---------------------------------------------------------------- bit helpers

def bool_ring() -> Ring:
    return BOOL
