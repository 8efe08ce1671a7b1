"""Protocol registry, metered cost tables and run reports."""
from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from . import gadgets, ml_blocks, mult
from .ring import BOOL, FixedPoint, Ring
from .runtime import run, run_split
from .sharing import get_framework, reconstruct, share
from .transport import PHASES

REPORT_SCHEMA = 1


# ---------------------------------------------------------------- protocols

@dataclass(frozen=True)
class Protocol:
    """A named operation with input generation and a plaintext oracle.

    inputs(rng, ring, n, d) returns (values, rings); oracle(ring, frac, *values)
    the expected output. Truncating protocols are compared within one ulp.
    """
    name: str
    op: object
    inputs: object
    oracle: object
    truncating: bool = False
    boolean_output: bool = False


def _arith(k, bound=None):
    def gen(rng, ring, n, d):
        if bound is None:
            return [ring.uniform(rng, (n,)) for _ in range(k)], [ring] * k
        b = bound(ring)
        return [ring.from_signed(rng.integers(-b, b, (n,))) for _ in range(k)], [ring] * k
    return gen


def _vectors(bound=None):
    def gen(rng, ring, n, d):
        if bound is None:
            return [ring.uniform(rng, (n, d)) for _ in range(2)], [ring] * 2
        b = bound(ring) // int(np.ceil(np.sqrt(d)))  # keep the d-term sum in range
        return [ring.from_signed(rng.integers(-b, b, (n, d))) for _ in range(2)], [ring] * 2
    return gen


def _half(ring):
    return 1 << (ring.bits // 2 - 1)


def _compare_range(ring):
    return 1 << (ring.bits - 3)


def _bit_value(rng, ring, n, d):
    return [rng.integers(0, 2, (n,)).astype(np.uint64), ring.uniform(rng, (n,))], [BOOL, ring]


def _bits(k):
    def gen(rng, ring, n, d):
        return [rng.integers(0, 2, (n,)).astype(np.uint64) for _ in range(k)], [BOOL] * k
    return gen


def _eq_inputs(rng, ring, n, d):
    a, b = ring.uniform(rng, (n,)), ring.uniform(rng, (n,))
    b[::2] = a[::2]
    return [a, b], [ring, ring]


def _sra_prod(ring, frac, *vals):
    return ring.sra(mult._prod(ring, vals), frac)


def _signed_max(ring, frac, a, b):
    return ring.from_signed(np.maximum(ring.signed(a), ring.signed(b)))


def _plain_sigmoid(ring, frac, v):
    from .ppml import plain_sigmoid
    return plain_sigmoid(ring, FixedPoint(ring, frac), v)


PROTOCOLS = {p.name: p for p in [
    Protocol("mult", mult.mult, _arith(2), lambda r, f, a, b: r.mul(a, b)),
    Protocol("mult3", mult.mult3, _arith(3), lambda r, f, *v: mult._prod(r, v)),
    Protocol("mult4", mult.mult4, _arith(4), lambda r, f, *v: mult._prod(r, v)),
    Protocol("dotp", mult.dotp, _vectors(), lambda r, f, a, b: r.reduce(r.mul(a, b).sum(-1, dtype=np.uint64))),
    Protocol("mult_trunc", lambda c, a, b: mult.mult(c, a, b, trunc=True), _arith(2, _half), _sra_prod, True),
    Protocol("dotp_trunc", lambda c, a, b: mult.dotp(c, a, b, trunc=True), _vectors(_half),
             lambda r, f, a, b: r.sra(r.reduce(r.mul(a, b).sum(-1, dtype=np.uint64)), f), True),
    Protocol("bitext", gadgets.bitext, _arith(1), lambda r, f, a: r.msb(a), boolean_output=True),
    Protocol("bitext_ppa2", lambda c, a: gadgets.bitext(c, a, 2), _arith(1), lambda r, f, a: r.msb(a),
             boolean_output=True),
    Protocol("a2b", gadgets.a2b, _arith(1), lambda r, f, a: r.to_bits(a), boolean_output=True),
    Protocol("eq", gadgets.eq, _eq_inputs, lambda r, f, a, b: (a == b).astype(np.uint64), boolean_output=True),
    Protocol("bit2a", gadgets.bit2a, _bits(1), lambda r, f, b: b),
    Protocol("bitinj", gadgets.bit_inj, _bit_value, lambda r, f, b, v: r.mul(b, v)),
    Protocol("relu", ml_blocks.relu, _arith(1, _compare_range),
             lambda r, f, a: np.where(r.signed(a) >= 0, a, 0).astype(np.uint64)),
    Protocol("sigmoid", ml_blocks.sigmoid, _arith(1, _compare_range), _plain_sigmoid),
    Protocol("max2", ml_blocks.max2, _arith(2, _compare_range), _signed_max),
]}


def protocol_program(proto: Protocol, values, rings, reveal: bool = True):
    """SPMD program: the first online party inputs everything, then the op runs."""
    def program(ctx):
        owner = ctx.fw.online[0]
        with ctx.unmetered():
            xs = [share(ctx, owner, v if ctx.me == owner else None, shape=np.shape(v), ring=r)
                  for v, r in zip(values, rings)]
        z = proto.op(ctx, *xs)
        if not reveal:
            return None
        with ctx.unmetered():
            return reconstruct(ctx, z)
    return program


def oracle_diff(proto: Protocol, ring: Ring, frac: int, values, got) -> dict:
    want = proto.oracle(ring, frac, *values)
    out_ring = BOOL if proto.boolean_output else ring
    diff = np.abs(out_ring.signed(out_ring.sub(np.asarray(got, dtype=np.uint64), want)))
    tol = 1 if proto.truncating else 0
    return {"max_ulp": int(diff.max()) if diff.size else 0, "mismatches": int((diff > tol).sum()),
            "tolerance_ulp": tol}


# ---------------------------------------------------------------- reports

@dataclass
class RunReport:
    framework: str
    protocol: str
    ring_bits: int
    frac_bits: int
    params: dict
    parties: dict
    online_rounds: int
    wall_time: float
    outcome: str
    oracle: dict | None = None
    transcript_sha256: str | None = None
    schema: int = REPORT_SCHEMA

    def totals(self) -> dict:
        return {ph: sum(p[f"bits_{ph}"] for p in self.parties.values()) for ph in PHASES}

    def to_dict(self, wall_time: bool = True) -> dict:
        d = asdict(self)
        if not wall_time:
            d.pop("wall_time")
        return d


def party_bits(meter, nodes) -> dict:
    out = {}
    for n in nodes:
        row = {}
        for ph in PHASES:
            bits = meter.total(ph, sender=n)
            row[f"bits_{ph}"] = bits
            row[f"bytes_{ph}"] = (bits + 7) // 8
        out[str(n)] = row
    return out


def outcome_of(outcomes: dict) -> str:
    values = set(outcomes.values())
    if values == {"ok"}:
        return "ok"
    if "fair-⊥" in values:
        return "fair-⊥"
    return "abort"


def transcript_digest(lines) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def run_protocol(framework: str, name: str, *, ring_bits: int = 64, frac_bits: int = 13, n: int = 1,
                 d: int = 1, seed: int = 0, oracle: bool = False, split: bool = False,
                 record: bool = False):
    """Run one protocol over the simulator; returns (report, session result)."""
    proto = PROTOCOLS[name]
    ring = Ring(ring_bits)
    fw = get_framework(framework)
    rng = np.random.default_rng(seed)
    values, rings = proto.inputs(rng, ring, n, d)
    program = protocol_program(proto, values, rings)
    kwargs = dict(ring_bits=ring_bits, frac_bits=frac_bits, seed=str(seed), record=record)
    start = time.perf_counter()
    if split:
        offline, res = run_split(fw, program, **kwargs)
        res.meter.merge(offline.meter)
    else:
        res = run(fw, program, **kwargs)
    elapsed = time.perf_counter() - start
    report = RunReport(
        framework=fw.name, protocol=name, ring_bits=ring_bits, frac_bits=frac_bits,
        params={"n": n, "d": d, "seed": seed, "split_phases": split},
        parties=party_bits(res.meter, fw.nodes), online_rounds=res.meter.online_rounds,
        wall_time=round(elapsed, 4), outcome=outcome_of(res.outcomes),
        transcript_sha256=transcript_digest(res.transcript_lines()) if record else None)
    if oracle:
        report.oracle = oracle_diff(proto, ring, frac_bits, values, res.outputs[fw.online[0]])
    return report, res


# ---------------------------------------------------------------- cost tables

@dataclass(frozen=True)
class Row:
    """One metered target: metric is a phase (bits, in units of ring width) or online_rounds."""
    framework: str
    protocol: str
    metric: str
    expected: int
    d: int = 1
    note: str = ""

    @property
    def label(self) -> str:
        dim = f" d={self.d}" if self.protocol.startswith("dotp") else ""
        unit = "" if self.metric == "online_rounds" else "l"
        return f"{self.framework} {self.protocol}{dim} {self.metric} = {self.expected}{unit}"


DIMS = (1, 10, 100, 1000)


def _rows() -> list:
    rows = []

    def mult_dotp(fw, pre, online, truncated=True):
        for proto, dims in (("mult", (1,)), ("dotp", DIMS)):
            for d in dims:
                if pre is not None:
                    rows.append(Row(fw, proto, "pre", pre, d))
                rows.append(Row(fw, proto, "online", online, d))
                rows.append(Row(fw, proto, "online_rounds", 1, d))
                if truncated:
                    rows.append(Row(fw, f"{proto}_trunc", "online", online, d, "truncation adds no online bits"))

    mult_dotp("astra", 1, 2)
    rows += [Row("astra", "mult3", "pre", 4), Row("astra", "mult4", "pre", 11)]
    mult_dotp("tetrad", 2, 3)
    rows.append(Row("tetrad", "mult3", "pre", 9))
    mult_dotp("swift", None, 3, truncated=False)
    mult_dotp("aby2", None, 2, truncated=False)
    for fw in ("astra", "tetrad"):
        rows += [Row(fw, "bitext", "online_rounds", 3, note="fan-in 4 prefix adder"),
                 Row(fw, "bitext_ppa2", "online_rounds", 6, note="fan-in 2 prefix adder")]
    return rows


TABLE = _rows()


@lru_cache(maxsize=None)
def measure(framework: str, protocol: str, d: int = 1, ring_bits: int = 64) -> dict:
    """Meter summary for a single instance (one output element)."""
    report, res = run_protocol(framework, protocol, ring_bits=ring_bits, n=1, d=d)
    return res.meter.summary()


@dataclass
class RowResult:
    row: Row
    measured: int
    ring_bits: int

    @property
    def passed(self) -> bool:
        want = self.row.expected * (1 if self.row.metric == "online_rounds" else self.ring_bits)
        return self.measured == want

    def line(self) -> str:
        unit = "" if self.row.metric == "online_rounds" else " bits"
        want = self.row.expected * (1 if self.row.metric == "online_rounds" else self.ring_bits)
        return f"{'PASS' if self.passed else 'FAIL'}  {self.row.label}: measured {self.measured}{unit}, want {want}"


def verify_rows(frameworks=None, ring_bits: int = 64) -> list:
    out = []
    for row in TABLE:
        if frameworks and row.framework not in frameworks:
            continue
        summary = measure(row.framework, row.protocol, row.d, ring_bits)
        out.append(RowResult(row, summary[row.metric], ring_bits))
    return out


def rows_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["framework", "protocol", "d", "metric", "expected", "measured", "status"])
    for r in results:
        want = r.row.expected * (1 if r.row.metric == "online_rounds" else r.ring_bits)
        writer.writerow([r.row.framework, r.row.protocol, r.row.d, r.row.metric, want, r.measured,
                         "PASS" if r.passed else "FAIL"])
    return buf.getvalue()


def reports_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["framework", "protocol", "ring_bits", "n", "d", *(f"bits_{p}" for p in PHASES),
                     "online_rounds", "wall_time", "outcome"])
    for r in reports:
        totals = r.totals()
        writer.writerow([r.framework, r.protocol, r.ring_bits, r.params.get("n"), r.params.get("d"),
                         *(totals[p] for p in PHASES), r.online_rounds, r.wall_time, r.outcome])
    return buf.getvalue()
