"""Party runtime, metered channels, joint-send and adversary hooks.

Every party runs the same program (SPMD) against a Party context. Channels
are FIFO per ordered pair. Each message carries a phase tag that decides which
meter it accrues to, and a causal depth (a Lamport clock over online messages)
from which online rounds are derived.
"""
from __future__ import annotations

import contextlib
import hashlib
import json
import queue
import socket
import struct
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .prf import Sampler, stream_id
from .ring import Ring

PHASES = ("pre", "online", "verify", "provider")
SETUP = "setup"  # unmetered: test-harness input dealing and output opening
PHASE_CODES = {"pre": 0, "online": 1, "verify": 2, "provider": 3, SETUP: 4}
CODE_PHASES = {v: k for k, v in PHASE_CODES.items()}

HEADER = struct.Struct("<IQQBBB")
META = struct.Struct("<HBB")


class SessionAborted(Exception):
    """All honest parties abandon the session after a failed check."""


class FairBottom(Exception):
    """Fair reconstruction ended in a unanimous no-output."""


class DeadlockError(RuntimeError):
    pass


class ProtocolDesync(RuntimeError):
    """A party received a message it did not expect (program bug, not an attack)."""


# ---------------------------------------------------------------- payloads

def encode_body(obj) -> tuple[bytes, int]:
    """Serialize a payload; returns (bytes, logical size in bits)."""
    if isinstance(obj, (bytes, bytearray)):
        return b"\x01" + bytes(obj), 8 * len(obj)
    arr, ring = obj
    shape = arr.shape
    head = struct.pack("<BBB", 0, ring.bits, len(shape)) + b"".join(struct.pack("<I", d) for d in shape)
    return head + ring.to_bytes(arr), int(arr.size) * ring.bits


def decode_body(data: bytes):
    if data[0] == 1:
        return bytes(data[1:])
    _, bits, ndim = struct.unpack_from("<BBB", data, 0)
    shape = struct.unpack_from("<" + "I" * ndim, data, 3)
    ring = Ring(bits)
    return ring.from_bytes(data[3 + 4 * ndim:], shape)


@dataclass
class Envelope:
    session: int
    gate: int
    phase: str
    sender: int
    receiver: int
    body: bytes
    bits: int
    seq: int = 0
    depth: int = 0
    deferred: bool = False
    label: str = ""
    tag: str = ""
    dropped: bool = False

    def payload(self) -> bytes:
        tag = self.tag.encode()[:255]
        return META.pack(self.depth, int(self.deferred) | (int(self.dropped) << 1), len(tag)) + tag + self.body

    def to_json(self) -> str:
        return json.dumps({
            "session": self.session, "gate": self.gate, "phase": self.phase,
            "sender": self.sender, "receiver": self.receiver, "seq": self.seq,
            "depth": self.depth, "deferred": self.deferred, "label": self.label,
            "tag": self.tag, "bits": self.bits, "dropped": self.dropped,
            "payload": self.body.hex(),
        }, sort_keys=True)


# ---------------------------------------------------------------- metering

class Meter:
    """Bit counters per (phase, sender, receiver) plus the online depth."""

    def __init__(self):
        self._lock = threading.Lock()
        self.bits: dict[tuple[str, int, int], int] = defaultdict(int)
        self.messages: dict[str, int] = defaultdict(int)
        self.online_rounds = 0

    def record(self, env: Envelope):
        if env.phase == SETUP:
            return
        with self._lock:
            self.bits[(env.phase, env.sender, env.receiver)] += env.bits
            self.messages[env.phase] += 1
            if env.phase == "online" and not env.deferred:
                self.online_rounds = max(self.online_rounds, env.depth)

    def total(self, phase: str, sender: int | None = None) -> int:
        return sum(b for (ph, s, _), b in self.bits.items()
                   if ph == phase and (sender is None or s == sender))

    def pair(self, phase: str, sender: int, receiver: int) -> int:
        return self.bits.get((phase, sender, receiver), 0)

    def merge(self, other: "Meter"):
        with self._lock:
            for k, v in other.bits.items():
                self.bits[k] += v
            for k, v in other.messages.items():
                self.messages[k] += v
            self.online_rounds = max(self.online_rounds, other.online_rounds)

    def summary(self) -> dict:
        return {ph: self.total(ph) for ph in PHASES} | {"online_rounds": self.online_rounds}


# ---------------------------------------------------------------- adversary

@dataclass
class Action:
    """One scripted deviation. match keys: phase, receiver, label, tag, gate."""
    mutation: str  # flip | drop | substitute | silence
    match: dict = field(default_factory=dict)
    nth: int | None = None
    value: Any = None

    def matches(self, env: Envelope) -> bool:
        return all(getattr(env, k) == v for k, v in self.match.items())


@dataclass
class AdversaryScript:
    target: int
    actions: list

    def __post_init__(self):
        self._hits = defaultdict(int)
        self._silenced = False
        self.fired = 0

    def apply(self, env: Envelope, obj):
        """Returns the (possibly mutated) payload, or None for a dropped message."""
        if env.sender != self.target:
            return obj
        if self._silenced:
            self.fired += 1
            return None
        for i, act in enumerate(self.actions):
            if not act.matches(env):
                continue
            k = self._hits[i]
            self._hits[i] += 1
            if act.nth is not None and k != act.nth:
                continue
            self.fired += 1
            if act.mutation == "drop":
                return None
            if act.mutation == "silence":
                self._silenced = True
                return None
            if act.mutation == "flip":
                return _flip(obj)
            if act.mutation == "substitute":
                return act.value(obj) if callable(act.value) else act.value
            raise ValueError(f"unknown mutation {act.mutation!r}")
        return obj


def _flip(obj):
    if isinstance(obj, (bytes, bytearray)):
        if not obj:
            return obj
        return bytes([obj[0] ^ 1]) + bytes(obj[1:])
    arr, ring = obj
    arr = np.array(arr, copy=True)
    if arr.size:
        arr.flat[0] = (int(arr.flat[0]) ^ 1) & int(ring.mask)
    return arr, ring


# ---------------------------------------------------------------- networks

class SimNetwork:
    """In-process channels for party threads, with deadlock detection."""

    def __init__(self, nodes, script: AdversaryScript | None = None, record: bool = False):
        self.nodes = tuple(nodes)
        self.script = script
        self.meter = Meter()
        self.record = record
        self.transcript: list[Envelope] = []
        self._queues = {(s, r): deque() for s in self.nodes for r in self.nodes if s != r}
        self._cond = threading.Condition()
        self._alive = set(self.nodes)
        self._waiting: dict[int, int] = {}
        self._deadlock: str | None = None

    def send(self, env: Envelope, obj):
        if self.script is not None:
            obj = self.script.apply(env, obj)
            if obj is None:
                env.dropped = True
                env.body, env.bits = b"", 0
            elif self.script.target == env.sender:
                env.body, env.bits = encode_body(obj)
        self.meter.record(env)
        with self._cond:
            if self.record:
                self.transcript.append(env)
            self._queues[(env.sender, env.receiver)].append((env, obj))
            self._cond.notify_all()

    def recv(self, me: int, frm: int):
        q = self._queues[(frm, me)]
        with self._cond:
            while not q:
                if self._deadlock:
                    raise DeadlockError(self._deadlock)
                self._waiting[me] = frm
                if self._stuck():
                    blocked = ", ".join(f"P{p} waits on P{f}" for p, f in sorted(self._waiting.items()))
                    self._deadlock = f"no deliverable message: {blocked}"
                    self._cond.notify_all()
                    raise DeadlockError(self._deadlock)
                self._cond.wait()
                self._waiting.pop(me, None)
            self._waiting.pop(me, None)
            return q.popleft()

    def _stuck(self) -> bool:
        if set(self._waiting) != self._alive:
            return False
        return all(not self._queues[(f, p)] for p, f in self._waiting.items())

    def finished(self, me: int):
        with self._cond:
            self._alive.discard(me)
            self._waiting.pop(me, None)
            if self._alive and self._stuck():
                blocked = ", ".join(f"P{p} waits on P{f}" for p, f in sorted(self._waiting.items()))
                self._deadlock = f"no deliverable message: {blocked}"
            self._cond.notify_all()

    def sorted_transcript(self) -> list[Envelope]:
        return sorted(self.transcript, key=lambda e: (e.sender, e.receiver, e.seq))


class TcpNetwork:
    """One party's view of a TCP mesh. Frames: u32 length, u64 session, u64 gate,
    u8 phase, u8 sender, u8 receiver, payload (little-endian)."""

    def __init__(self, me: int, endpoints: dict[int, tuple[str, int]], session: int = 0,
                 timeout: float = 30.0, script: AdversaryScript | None = None):
        self.me = me
        self.session = session
        self.timeout = timeout
        self.script = script
        self.meter = Meter()
        self.transcript: list[Envelope] = []
        self.record = False
        self._socks: dict[int, socket.socket] = {}
        self._inbox: dict[int, queue.Queue] = {p: queue.Queue() for p in endpoints if p != me}
        self._send_lock = threading.Lock()
        self._connect(endpoints)
        for peer, sock in self._socks.items():
            threading.Thread(target=self._reader, args=(peer, sock), daemon=True).start()

    def _connect(self, endpoints):
        host, port = endpoints[self.me]
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(len(endpoints))
        server.settimeout(self.timeout)
        deadline = time.monotonic() + self.timeout
        for peer in sorted(p for p in endpoints if p < self.me):
            while True:
                try:
                    sock = socket.create_connection(endpoints[peer], timeout=self.timeout)
                    break
                except OSError:
                    if time.monotonic() > deadline:
                        raise TimeoutError(f"P{self.me} could not reach P{peer}") from None
                    time.sleep(0.05)
            sock.sendall(struct.pack("<B", self.me))
            self._socks[peer] = sock
        for _ in [p for p in endpoints if p > self.me]:
            sock, _ = server.accept()
            sock.settimeout(None)
            (peer,) = struct.unpack("<B", _read_exact(sock, 1))
            self._socks[peer] = sock
        server.close()
        for sock in self._socks.values():
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.settimeout(None)

    def _reader(self, peer, sock):
        try:
            while True:
                head = _read_exact(sock, HEADER.size)
                length, session, gate, phase, sender, receiver = HEADER.unpack(head)
                payload = _read_exact(sock, length)
                depth, flags, taglen = META.unpack_from(payload, 0)
                tag = payload[META.size:META.size + taglen].decode()
                body = payload[META.size + taglen:]
                env = Envelope(session, gate, CODE_PHASES[phase], sender, receiver, body, 0,
                               depth=depth, deferred=bool(flags & 1), tag=tag, dropped=bool(flags & 2))
                obj = None if env.dropped else decode_body(body)
                if obj is not None and not isinstance(obj, bytes):
                    obj = (obj, None)
                self._inbox[peer].put((env, obj))
        except (OSError, EOFError):
            self._inbox[peer].put(None)

    def send(self, env: Envelope, obj):
        if self.script is not None:
            obj = self.script.apply(env, obj)
            if obj is None:
                env.dropped, env.body, env.bits = True, b"", 0
            else:
                env.body, env.bits = encode_body(obj)
        self.meter.record(env)
        payload = env.payload()
        frame = HEADER.pack(len(payload), env.session, env.gate, PHASE_CODES[env.phase],
                            env.sender, env.receiver) + payload
        with self._send_lock:
            self._socks[env.receiver].sendall(frame)

    def recv(self, me: int, frm: int):
        try:
            item = self._inbox[frm].get(timeout=self.timeout)
        except queue.Empty:
            raise TimeoutError(f"P{me} timed out waiting for P{frm}") from None
        if item is None:
            raise ConnectionError(f"P{frm} closed the connection")
        env, obj = item
        if isinstance(obj, tuple):
            obj = (obj[0], None)
        return env, obj

    def finished(self, me: int):
        pass

    def close(self):
        for sock in self._socks.values():
            with contextlib.suppress(OSError):
                sock.shutdown(socket.SHUT_RDWR)
                sock.close()


def _read_exact(sock, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError
        buf.extend(chunk)
    return bytes(buf)


# ---------------------------------------------------------------- party runtime

def _hash_bytes(value) -> bytes:
    if isinstance(value, (bytes, bytearray)):
        return bytes(value)
    return np.ascontiguousarray(np.asarray(value, dtype=np.uint64), dtype="<u8").tobytes()


class Party:
    """Execution context of one node in a session.

    mode is "full" (preprocess and run online), "offline" (preprocess only;
    masked values are None and per-gate material is stored) or "online"
    (load stored material and run the online phase).
    """

    def __init__(self, me: int, parties: tuple, net, sampler: Sampler, *, fw=None,
                 ring: Ring | None = None, frac_bits: int = 13, dealer: int | None = None,
                 verifying: bool = False, mode: str = "full", store: dict | None = None,
                 session: int = 0, options: dict | None = None):
        self.me = me
        self.parties = tuple(parties)
        self.net = net
        self.sampler = sampler
        self.fw = fw
        self.ring = ring or Ring(64)
        self.frac_bits = frac_bits
        self.dealer = dealer
        self.verifying = verifying
        self.mode = mode
        self.store = {} if store is None else store
        self.session = session
        self.options = dict(options or {})
        self.clock = 0
        self._round_depth = 0
        self._round_clock = 0
        self.aborted = False
        self.finalized = False
        self.abort_reasons: list[str] = []
        self._phases = ["online"]
        self._override = 0
        self._path: list[str] = []
        self._counters: list[int] = [0]
        self._streams: dict[str, int] = defaultdict(int)
        self._seq: dict[int, int] = defaultdict(int)
        self._hash_out: dict = {}
        self._hash_in: dict = {}

    # -- roles and phases
    @property
    def is_dealer(self) -> bool:
        return self.me == self.dealer

    def knows(self, holders) -> bool:
        """True for holders, and for the dealer, which tracks every mask."""
        return self.is_dealer or self.me in holders

    @property
    def phase_name(self) -> str:
        return self._phases[-1]

    @property
    def online_active(self) -> bool:
        return (self.mode != "offline" and not self.is_dealer) or self._override > 0

    @contextlib.contextmanager
    def phase(self, name: str):
        self._phases.append(name)
        try:
            yield
        finally:
            self._phases.pop()

    @contextlib.contextmanager
    def unmetered(self):
        with self.phase(SETUP):
            yield

    @contextlib.contextmanager
    def preprocessing_circuit(self):
        """Run a full sub-protocol (including its online steps) inside preprocessing."""
        self._override += 1
        try:
            with self.phase("pre"):
                yield
        finally:
            self._override -= 1

    # -- gates
    @contextlib.contextmanager
    def gate(self, name: str):
        idx = self._counters[-1]
        self._counters[-1] += 1
        self._path.append(f"{name}{idx}")
        self._counters.append(0)
        try:
            yield "/".join(self._path)
        finally:
            self._counters.pop()
            self._path.pop()

    @property
    def gate_id(self) -> str:
        return "/".join(self._path)

    @property
    def label(self) -> str:
        return self._path[-1].rstrip("0123456789") if self._path else ""

    def prep(self, fn: Callable[[], Any]):
        """Run (or load) the preprocessing of the current gate."""
        gid = self.gate_id
        if self.mode == "online" and self._override == 0:
            if gid not in self.store:
                raise KeyError(f"no preprocessing material for gate {gid}")
            return self.store[gid]
        with self.phase("pre"):
            out = fn()
        if self.mode == "offline" and self._override == 0:
            self.store[gid] = out
        return out

    # -- randomness
    def sample(self, holders, shape, ring: Ring | None = None, name: str = "s"):
        """Common randomness for holders; None for non-holders. Call on every party."""
        ring = ring or self.ring
        key = f"{self.gate_id}/{name}"
        k = self._streams[key]
        self._streams[key] += 1
        return self.sampler.draw(tuple(sorted(holders)), f"{key}#{k}", tuple(shape), ring)

    # -- messaging
    @contextlib.contextmanager
    def round(self):
        """Messages in the block form one communication round.

        Sends use the clock at block entry and receives take effect on exit, so
        the block must not send anything computed from what it receives.
        """
        if self._round_depth:
            self._round_depth += 1
            try:
                yield
            finally:
                self._round_depth -= 1
            return
        self._round_depth = 1
        self._round_clock = self.clock
        try:
            yield
        finally:
            self._round_depth = 0
            self.clock = max(self.clock, self._round_clock)

    def send(self, to: int, value, ring: Ring | None = None, tag: str = "", deferred: bool = False):
        if to == self.me:
            raise ValueError("send to self")
        phase = "provider" if self.is_dealer and self.phase_name != SETUP else self.phase_name
        if isinstance(value, (bytes, bytearray)):
            obj = bytes(value)
        else:
            ring = ring or self.ring
            obj = (np.asarray(np.asarray(value, dtype=np.uint64) & ring.mask), ring)  # keep 0-d arrays as arrays
        body, bits = encode_body(obj)
        depth = self.clock + 1 if phase == "online" and not deferred else 0
        env = Envelope(self.session, stream_id(self.gate_id) if self._path else 0, phase, self.me, to,
                       body, bits, seq=self._seq[to], depth=depth,
                       deferred=deferred and phase == "online", label=self.label, tag=tag)
        self._seq[to] += 1
        self.net.send(env, obj)

    def recv(self, frm: int, tag: str = ""):
        """Next payload from frm: an array, bytes, or None when it was dropped."""
        env, obj = self.net.recv(self.me, frm)
        if env.tag != tag:
            raise ProtocolDesync(f"P{self.me} expected {tag!r} from P{frm}, got {env.tag!r} ({env.label})")
        if env.phase == "online" and not env.deferred:
            if self._round_depth:
                self._round_clock = max(self._round_clock, env.depth)
            else:
                self.clock = max(self.clock, env.depth)
        if obj is None:
            return None
        if isinstance(obj, tuple):
            return obj[0]
        return obj

    def recv_array(self, frm: int, shape, tag: str = "", ring: Ring | None = None):
        value = self.recv(frm, tag)
        if value is None or isinstance(value, bytes) or value.shape != tuple(shape):
            self.flag_abort(f"missing or malformed {tag!r} from P{frm}")
            return (ring or self.ring).zeros(shape)
        return value & (ring or self.ring).mask

    def flag_abort(self, reason: str):
        self.aborted = True
        self.abort_reasons.append(reason)

    # -- joint send
    def jsnd(self, sender: int, checker: int, to: int, value, shape, ring: Ring | None = None,
             tag: str = "", deferred: bool = False):
        """sender transmits value to `to`; checker contributes to a hash checked at verify.

        Returns the value at sender, checker and receiver; None elsewhere.
        """
        key = ("jsnd", sender, checker)
        if self.me == sender:
            self.send(to, value, ring, tag=tag, deferred=deferred)
            return value
        if self.me == checker:
            self.hash_send(to, key, value)
            return value
        if self.me == to:
            got = self.recv_array(sender, shape, tag=tag, ring=ring)
            self.hash_expect(checker, key, got)
            return got
        return None

    def hash_send(self, to: int, key, value):
        if not self.verifying:
            return
        self._hash_out.setdefault((to, key), hashlib.sha256()).update(_hash_bytes(value))

    def hash_expect(self, frm: int, key, value):
        if not self.verifying:
            return
        self._hash_in.setdefault((frm, key), hashlib.sha256()).update(_hash_bytes(value))

    def verify(self) -> bool:
        """Exchange pending hashes, then abort flags. Raises SessionAborted on failure."""
        if not self.verifying or self.is_dealer:
            return True
        with self.phase("verify"):
            peers = [p for p in self.parties if p != self.me]
            for p in peers:
                keys = sorted((k for (to, k) in self._hash_out if to == p), key=repr)
                self.send(p, b"".join(self._hash_out[(p, k)].digest() for k in keys), tag="hashes")
            for p in peers:
                keys = sorted((k for (frm, k) in self._hash_in if frm == p), key=repr)
                want = b"".join(self._hash_in[(p, k)].digest() for k in keys)
                got = self.recv(p, tag="hashes")
                if got is None or got != want:
                    self.flag_abort(f"hash mismatch on messages checked by P{p}")
            self._hash_out.clear()
            self._hash_in.clear()
            flag = b"\x01" if self.aborted else b"\x00"
            for p in peers:
                self.send(p, flag, tag="flag")
            for p in peers:
                got = self.recv(p, tag="flag")
                if got != b"\x00":
                    self.flag_abort(f"P{p} signalled abort")
        if self.aborted:
            raise SessionAborted("; ".join(self.abort_reasons))
        return True

    def pending_checks(self) -> bool:
        return bool(self._hash_out or self._hash_in)


# ---------------------------------------------------------------- sessions

@dataclass
class SessionResult:
    outputs: dict
    outcomes: dict
    meter: Meter
    transcript: list
    stores: dict
    reasons: dict

    def transcript_lines(self) -> list[str]:
        return [env.to_json() for env in self.transcript]


def run_session(nodes, program: Callable[[Party], Any], *, sampler_for: Callable[[int], Sampler],
                party_kwargs: Callable[[int], dict] | None = None, script: AdversaryScript | None = None,
                record: bool = False, final_verify: bool = True) -> SessionResult:
    """Run program on every node in its own thread over the simulator."""
    nodes = tuple(nodes)
    net = SimNetwork(nodes, script=script, record=record)
    outputs, outcomes, reasons, errors, stores = {}, {}, {}, {}, {}
    contexts = {}

    def body(node):
        kwargs = party_kwargs(node) if party_kwargs else {}
        ctx = Party(node, kwargs.pop("parties", nodes), net, sampler_for(node), **kwargs)
        contexts[node] = ctx
        try:
            out = program(ctx)
            if final_verify and ctx.verifying and not ctx.finalized:
                ctx.verify()
            outputs[node] = out
            outcomes[node] = "ok"
        except SessionAborted as exc:
            outcomes[node], reasons[node] = "abort", str(exc)
        except FairBottom as exc:
            outcomes[node], reasons[node] = "fair-⊥", str(exc)
        except BaseException as exc:  # surfaced to the caller below
            errors[node] = exc
            outcomes[node] = "error"
        finally:
            stores[node] = ctx.store
            net.finished(node)

    threads = [threading.Thread(target=body, args=(n,), name=f"P{n}", daemon=True) for n in nodes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        real = {n: e for n, e in errors.items() if not isinstance(e, DeadlockError)}
        node, exc = sorted((real or errors).items())[0]
        raise exc
    return SessionResult(outputs, outcomes, net.meter, net.sorted_transcript() if record else [],
                         stores, reasons)
