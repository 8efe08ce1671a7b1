"""Command line: keygen, run, bench, verify-tables and fault."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bench, faults, ppml
from .prf import KeyConfigError, KeyGraph
from .ring import FixedPoint, Ring
from .runtime import run, run_split, run_tcp
from .sharing import FRAMEWORKS, get_framework, reconstruct, share

RINGS = (8, 16, 32, 64)
APPS = ("linreg", "logreg", "mlp", "svm")


# ---------------------------------------------------------------- config

class ConfigError(ValueError):
    pass


@dataclass
class Config:
    framework: str = "astra"
    transport: str = "sim"
    ring: int = 64
    precision: int = 13
    seed: int = 0
    parties: dict = field(default_factory=dict)  # node -> (host, port), TCP only


def _parse_parties(text: str) -> dict:
    """'0=127.0.0.1:9000, 1=127.0.0.1:9001' -> {0: ('127.0.0.1', 9000), ...}"""
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        node, _, addr = item.partition("=")
        host, _, port = addr.rpartition(":")
        if not host or not port:
            raise ValueError(f"endpoint {item!r} is not node=host:port")
        out[int(node)] = (host, int(port))
    return out


_FIELDS = {
    "framework": lambda v: get_framework(v).name,
    "transport": lambda v: v if v in ("sim", "tcp") else _bad(f"transport must be sim or tcp, not {v!r}"),
    "ring": lambda v: int(v) if int(v) in RINGS else _bad(f"ring width must be one of {RINGS}"),
    "precision": int,
    "seed": int,
    "parties": _parse_parties,
}


def _bad(msg):
    raise ValueError(msg)


def parse_config(text: str, source: str = "config") -> Config:
    """key = value lines; '#' starts a comment."""
    cfg = Config()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _FIELDS[key](value))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    if cfg.precision >= cfg.ring:
        raise ConfigError(f"{source}: precision {cfg.precision} must be below the ring width {cfg.ring}")
    return cfg


def load_config(args) -> Config:
    cfg = parse_config(Path(args.config).read_text(), args.config) if args.config else Config()
    for key in ("framework", "transport", "ring", "precision", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.precision >= cfg.ring:
        raise ConfigError(f"precision {cfg.precision} must be below the ring width {cfg.ring}")
    return cfg


# ---------------------------------------------------------------- output

def _emit(args, name: str, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text if text.endswith("\n") else text + "\n")
    else:
        print(text)


# ---------------------------------------------------------------- keygen

def cmd_keygen(args) -> int:
    cfg = load_config(args)
    fw = get_framework(cfg.framework)
    keys = KeyGraph.generate(fw.nodes, str(cfg.seed))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for node in fw.nodes:
        view = keys if node == fw.dealer else keys.view(node)
        (out / f"{fw.name}-P{node}.keys").write_bytes(view.dumps())
    print(f"wrote {len(fw.nodes)} key files for {fw.name} to {out}")
    return 0


def _load_keys(args, fw, node) -> KeyGraph:
    path = Path(args.keys or ".") / f"{fw.name}-P{node}.keys"
    try:
        return KeyGraph.loads(path.read_bytes())
    except FileNotFoundError:
        raise ConfigError(f"no key file {path}; run keygen first") from None


# ---------------------------------------------------------------- apps

@dataclass
class App:
    program: object
    check: object  # outputs -> oracle dict
    params: dict
    reveal: object = None  # outputs -> JSON-able model


def _owner_share(ctx, values):
    owner = ctx.fw.online[0]
    with ctx.unmetered():
        return [share(ctx, owner, v if ctx.me == owner else None, shape=np.shape(v)) for v in values]


def _regression_app(kind: str, args, cfg: Config) -> App:
    ring, fx = Ring(cfg.ring), FixedPoint(Ring(cfg.ring), cfg.precision)
    if args.data:
        try:
            xf, yf = ppml.load_csv(args.data)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    elif kind == "linreg":
        xf, yf = ppml.synthetic_linear(args.n or 128, cfg.seed)
    else:
        xf, yf = ppml.synthetic_logistic(args.n or 128, cfg.seed)
    tc = ppml.TrainConfig(args.lr, args.batch, args.iterations, xf.shape[1], cfg.seed)
    x, y = fx.encode(xf), fx.encode(yf)

    def program(ctx):
        xs, ys = _owner_share(ctx, [x, y])
        w = ppml.train(ctx, kind, tc, xs, ys)
        with ctx.unmetered():
            return reconstruct(ctx, w)

    def check(w):
        want = ppml.plain_train(kind, tc, x, y, ring, cfg.precision)
        diff = fx.ulp_diff(w, want)
        bound = ppml.weight_error_bound(tc, x, ring, cfg.precision)
        out = {"max_ulp": int(diff.max()), "mismatches": int((diff > bound).sum()), "tolerance_ulp": bound}
        if kind == "logreg":
            out["accuracy"] = float((ppml.predict_logistic(xf, fx.decode(w)) == yf).mean())
            out["oracle_accuracy"] = float((ppml.predict_logistic(xf, fx.decode(want)) == yf).mean())
        return out

    params = {"n": len(xf), "features": xf.shape[1], "batch": args.batch, "iterations": args.iterations,
              "learning_rate": args.lr}
    return App(program, check, params, lambda w: {"weights": fx.decode(w).tolist()})


def _mlp_app(args, cfg: Config) -> App:
    ring, fx = Ring(cfg.ring), FixedPoint(Ring(cfg.ring), cfg.precision)
    dims = tuple(int(v) for v in args.dims.split("-"))
    rng = np.random.default_rng(cfg.seed)
    weights = [fx.encode(w) for w in ppml.init_mlp_weights(dims, cfg.seed)]
    x = fx.encode(rng.uniform(-1, 1, (args.n or 100, dims[0])))

    def program(ctx):
        shared = _owner_share(ctx, [x, *weights])
        hot = ppml.mlp_infer(ctx, ppml.Model(shared[1:]), shared[0])
        with ctx.unmetered():
            return reconstruct(ctx, hot)

    def check(hot):
        logits = ring.signed(ppml.plain_mlp_logits(ring, weights, x, cfg.precision))
        top = np.sort(logits, axis=1)
        clear = top[:, -1] - top[:, -2] >= 2  # margins under 2 ulp are ties for the oracle
        agree = np.argmax(hot, axis=1) == np.argmax(logits, axis=1)
        return {"max_ulp": 0, "mismatches": int((~agree & clear).sum()), "tolerance_ulp": 0,
                "compared": int(clear.sum())}

    return App(program, check, {"n": len(x), "dims": list(dims)})


def _svm_app(args, cfg: Config) -> App:
    ring, fx = Ring(cfg.ring), FixedPoint(Ring(cfg.ring), cfg.precision)
    rng = np.random.default_rng(cfg.seed)
    q, d = args.classes, args.d
    f, b = fx.encode(rng.uniform(-1, 1, (q, d))), fx.encode(rng.uniform(-1, 1, q))
    x = fx.encode(rng.uniform(-1, 1, (args.n or 100, d)))

    def program(ctx):
        fs, bs, xs = _owner_share(ctx, [f, b, x])
        hot = ppml.svm_infer(ctx, fs, bs, xs)
        with ctx.unmetered():
            return reconstruct(ctx, hot)

    def check(hot):
        scores = ring.signed(ring.add(ppml.plain_matmul(ring, x, f.T, cfg.precision), b))
        top = np.sort(scores, axis=1)
        clear = top[:, -1] - top[:, -2] >= 2 if q > 1 else np.ones(len(x), dtype=bool)
        agree = np.argmax(hot, axis=1) == np.argmax(scores, axis=1)
        return {"max_ulp": 0, "mismatches": int((~agree & clear).sum()), "tolerance_ulp": 0,
                "compared": int(clear.sum())}

    return App(program, check, {"n": len(x), "classes": q, "features": d})


def build_app(args, cfg: Config) -> App:
    if args.app in ("linreg", "logreg"):
        return _regression_app(args.app, args, cfg)
    if args.app == "mlp":
        return _mlp_app(args, cfg)
    return _svm_app(args, cfg)


def build_protocol(args, cfg: Config) -> App:
    proto = bench.PROTOCOLS[args.protocol]
    ring = Ring(cfg.ring)
    values, rings = proto.inputs(np.random.default_rng(cfg.seed), ring, args.n or 1, args.d)
    return App(bench.protocol_program(proto, values, rings),
               lambda got: bench.oracle_diff(proto, ring, cfg.precision, values, got),
               {"n": args.n or 1, "d": args.d})


# ---------------------------------------------------------------- run

def cmd_run(args) -> int:
    cfg = load_config(args)
    if bool(args.app) == bool(args.protocol):
        raise ConfigError("give exactly one of --protocol or --app")
    fw = get_framework(cfg.framework)
    app = build_app(args, cfg) if args.app else build_protocol(args, cfg)
    kwargs = dict(ring_bits=cfg.ring, frac_bits=cfg.precision)
    start = time.perf_counter()
    if cfg.transport == "tcp":
        if args.party is None:
            raise ConfigError("tcp transport needs --party")
        if not cfg.parties:
            raise ConfigError("tcp transport needs 'parties' endpoints in the config")
        if args.split_phases:
            raise ConfigError("--split-phases runs on the simulator only")
        res = run_tcp(fw, app.program, args.party, cfg.parties, _load_keys(args, fw, args.party), **kwargs)
        nodes, reader = (args.party,), args.party
    else:
        kwargs.update(seed=str(cfg.seed), record=True)
        if args.split_phases:
            offline, res = run_split(fw, app.program, **kwargs)
            res.meter.merge(offline.meter)
            res.transcript = offline.transcript + res.transcript
        else:
            res = run(fw, app.program, **kwargs)
        nodes, reader = fw.nodes, fw.online[0]
    elapsed = time.perf_counter() - start

    report = bench.RunReport(
        framework=fw.name, protocol=args.app or args.protocol, ring_bits=cfg.ring, frac_bits=cfg.precision,
        params={**app.params, "seed": cfg.seed, "split_phases": bool(args.split_phases),
                "transport": cfg.transport},
        parties=bench.party_bits(res.meter, nodes), online_rounds=res.meter.online_rounds,
        wall_time=round(elapsed, 4), outcome=bench.outcome_of(res.outcomes))
    output = res.outputs.get(reader)
    if cfg.transport == "sim":
        report.transcript_sha256 = bench.transcript_digest(res.transcript_lines())
    if args.oracle and report.outcome == "ok" and output is not None:
        report.oracle = app.check(output)
    _emit(args, "report.json", report.to_dict())
    if args.out and cfg.transport == "sim":
        _emit(args, "transcript.jsonl", "\n".join(res.transcript_lines()))
    if args.reveal and output is not None:
        model = app.reveal(output) if app.reveal else {"output": np.asarray(output).tolist()}
        _emit(args, "model.json", model)
    failed = report.outcome != "ok" or (report.oracle is not None and report.oracle["mismatches"])
    return 1 if failed else 0


# ---------------------------------------------------------------- bench / tables / faults

def cmd_bench(args) -> int:
    cfg = load_config(args)
    frameworks = args.frameworks or [cfg.framework]
    protocols = args.protocols or ["mult", "mult_trunc", "dotp", "mult3", "mult4", "bitext"]
    dims = [int(v) for v in args.d_grid.split(",")]
    reports = []
    for fw in frameworks:
        for name in protocols:
            for d in dims if name.startswith("dotp") else [1]:
                report, _ = bench.run_protocol(fw, name, ring_bits=cfg.ring, frac_bits=cfg.precision,
                                               n=args.n or 1, d=d, seed=cfg.seed, oracle=True)
                reports.append(report)
                totals = report.totals()
                print(f"{fw:7s} {name:12s} d={d:<5d} pre={totals['pre']:<7d} online={totals['online']:<7d} "
                      f"rounds={report.online_rounds:<3d} {report.outcome}")
    _emit(args, "bench.json", [r.to_dict() for r in reports])
    if args.csv:
        Path(args.csv).write_text(bench.reports_csv(reports))
    return 0 if all(r.outcome == "ok" and not r.oracle["mismatches"] for r in reports) else 1


def cmd_verify_tables(args) -> int:
    frameworks = args.frameworks or list(FRAMEWORKS)
    results = bench.verify_rows(frameworks)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} rows pass")
    if args.csv:
        Path(args.csv).write_text(bench.rows_csv(results))
    return 1 if failed else 0


def cmd_fault(args) -> int:
    if args.list:
        for s in faults.SCENARIOS.values():
            print(f"{s.name:30s} {s.framework:7s} {s.mode:6s} P{s.attacker}: {s.description}")
        return 0
    names = list(faults.SCENARIOS) if args.all or not args.scenario else args.scenario
    unknown = [n for n in names if n not in faults.SCENARIOS]
    if unknown:
        raise ConfigError(f"unknown scenario {unknown[0]!r}; see fault --list")
    failed = 0
    for name in names:
        result = faults.run_scenario(faults.SCENARIOS[name])
        failed += not result.passed
        print(f"{'PASS' if result.passed else 'FAIL'}  {name}: honest outcome {result.outcome}")
    return 1 if failed else 0


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file (framework, transport, parties, ring, precision, seed)")
    p.add_argument("--framework", choices=sorted(FRAMEWORKS))
    p.add_argument("--transport", choices=("sim", "tcp"))
    p.add_argument("--ring", type=int, choices=RINGS)
    p.add_argument("--precision", type=int, help="fractional bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maskmpc", description="Masked-sharing MPC frameworks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="write per-party PRF key files")
    _common(p)
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("run", help="run one protocol or application")
    _common(p)
    p.add_argument("--protocol", choices=sorted(bench.PROTOCOLS))
    p.add_argument("--app", choices=APPS)
    p.add_argument("--n", type=int, help="number of inputs (rows)")
    p.add_argument("--d", type=int, default=4, help="vector length / feature count")
    p.add_argument("--oracle", action="store_true", help="compare against the plaintext oracle")
    p.add_argument("--split-phases", action="store_true", help="separate offline and online runs")
    p.add_argument("--reveal", action="store_true", help="write the opened result as model.json")
    p.add_argument("--party", type=int, help="this process's node id (tcp)")
    p.add_argument("--keys", help="directory with key files (tcp)")
    p.add_argument("--data", help="CSV with a header row and a 'y' label column")
    p.add_argument("--iterations", type=int, default=100)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--dims", default="16-8-4", help="MLP layer widths")
    p.add_argument("--classes", type=int, default=3, help="SVM classes")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="sweep protocols and report metered costs")
    _common(p)
    p.add_argument("--frameworks", nargs="+", choices=sorted(FRAMEWORKS))
    p.add_argument("--protocols", nargs="+", choices=sorted(bench.PROTOCOLS))
    p.add_argument("--d-grid", default="1,10,100,1000")
    p.add_argument("--n", type=int)
    p.add_argument("--csv", help="write one CSV row per run")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify-tables", help="check every metered cost target")
    p.add_argument("--framework", dest="frameworks", action="append", choices=sorted(FRAMEWORKS))
    p.add_argument("--csv", help="write the rows as CSV")
    p.set_defaults(func=cmd_verify_tables)

    p = sub.add_parser("fault", help="run scripted single-party attacks")
    p.add_argument("--scenario", action="append")
    p.add_argument("--all", action="store_true")
    p.add_argument("--list", action="store_true")
    p.set_defaults(func=cmd_fault)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
