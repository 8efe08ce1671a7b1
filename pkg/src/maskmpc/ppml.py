"""Training and inference on shared data, with plaintext fixed-point oracles.

Regressions run mini-batch gradient descent on zero-initialized weights:
    w <- w - (alpha / B) * Xb^T (act(Xb w) - Yb)
where act is the identity (linear) or the clipped sigmoid (logistic).
Each step is two truncated matrix products and one constant rescale.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ml_blocks
from .mult import scale_const_trunc
from .ring import FixedPoint, Ring
from .sharing import MShare, constant
from .transport import Party

KINDS = ("linreg", "logreg")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    iterations: int
    features: int
    seed: int = 0
    random_batches: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0 or self.features < 1:
            raise ValueError("batch size and feature count must be positive, iterations non-negative")

    def step_constant(self, fx: FixedPoint) -> np.ndarray:
        """alpha / B as one fixed-point constant."""
        c = fx.encode(self.learning_rate / self.batch_size)
        if self.learning_rate and not fx.ring.signed(c):
            raise ValueError(f"alpha/B = {self.learning_rate / self.batch_size} underflows {fx.frac_bits} fractional bits")
        return c

    def batches(self, n: int):
        """Row indices per iteration: sequential with wraparound, or seeded random."""
        rng = np.random.default_rng(self.seed)
        for t in range(self.iterations):
            if self.random_batches:
                yield rng.integers(0, n, self.batch_size)
            else:
                yield (t * self.batch_size + np.arange(self.batch_size)) % n


def _rows(x: MShare, idx) -> MShare:
    return x.map(lambda a: np.asarray(a)[idx], (len(idx),) + x.shape[1:])


def _transpose(x: MShare) -> MShare:
    return x.map(lambda a: np.swapaxes(a, 0, 1), x.shape[::-1])


def gd_step(ctx: Party, kind: str, w: MShare, xb: MShare, yb: MShare, step: np.ndarray) -> MShare:
    u = ml_blocks.matmul(ctx, xb, w)
    if kind == "logreg":
        u = ml_blocks.sigmoid(ctx, u)
    g = ml_blocks.matmul(ctx, _transpose(xb), u - yb)
    return w - scale_const_trunc(ctx, g, step)


def train(ctx: Party, kind: str, cfg: TrainConfig, x: MShare, y: MShare) -> MShare:
    """Weights after cfg.iterations steps on shared (n, d) features and (n,) labels."""
    if kind not in KINDS:
        raise ValueError(f"unknown regression {kind!r}")
    n, d = x.shape
    if d != cfg.features or y.shape != (n,):
        raise ValueError(f"shape mismatch: X {x.shape}, Y {y.shape}, {cfg.features} features")
    step = cfg.step_constant(FixedPoint(x.ring, ctx.frac_bits))
    w = constant(ctx, np.zeros(d, dtype=np.uint64), ring=x.ring)
    for idx in cfg.batches(n):
        w = gd_step(ctx, kind, w, _rows(x, idx), _rows(y, idx), step)
    return w


def linreg_train(ctx: Party, cfg: TrainConfig, x: MShare, y: MShare) -> MShare:
    return train(ctx, "linreg", cfg, x, y)


def logreg_train(ctx: Party, cfg: TrainConfig, x: MShare, y: MShare) -> MShare:
    return train(ctx, "logreg", cfg, x, y)


# ---------------------------------------------------------------- plaintext oracle

def plain_sigmoid(ring: Ring, fx: FixedPoint, u) -> np.ndarray:
    half, neg_half = fx.encode(0.5), fx.encode(-0.5)
    s = ring.signed(u)
    low = np.where(s >= ring.signed(neg_half), ring.add(u, half), 0)
    high = np.where(s >= ring.signed(half), ring.sub(half, u), 0)
    return ring.add(ring.reduce(low), ring.reduce(high))


def plain_matmul(ring: Ring, a, b, frac_bits: int) -> np.ndarray:
    """Ring product with the same rescale as the secure path (floor)."""
    prod = ring.mul(np.asarray(a)[..., :, :, None] if np.ndim(b) == 2 else np.asarray(a),
                    np.asarray(b)[None, :, :] if np.ndim(b) == 2 else np.asarray(b)[None, :])
    return ring.sra(ring.reduce(prod.sum(axis=-2 if np.ndim(b) == 2 else -1, dtype=np.uint64)), frac_bits)


def plain_train(kind: str, cfg: TrainConfig, x, y, ring: Ring, frac_bits: int) -> np.ndarray:
    """The same GD loop on encoded ring values, truncating by arithmetic shift."""
    fx = FixedPoint(ring, frac_bits)
    step = cfg.step_constant(fx)
    x, y = ring.reduce(x), ring.reduce(y)
    n, d = x.shape
    w = ring.zeros(d)
    for idx in cfg.batches(n):
        xb, yb = x[idx], y[idx]
        u = plain_matmul(ring, xb, w, frac_bits)
        if kind == "logreg":
            u = plain_sigmoid(ring, fx, u)
        g = plain_matmul(ring, xb.T, ring.sub(u, yb), frac_bits)
        w = ring.sub(w, ring.sra(ring.mul(g, step), frac_bits))
    return w


def weight_error_bound(cfg: TrainConfig, x, ring: Ring, frac_bits: int) -> int:
    """Per-weight ulp bound from the one-ulp-per-truncation model.

    A step truncates u (and r) by at most 1 ulp per row, so g drifts by at
    most 1 + B * max|x| ulps (the sigmoid is 1-Lipschitz), which the
    rescale shrinks by alpha/B before adding its own ulp. The weight error
    then propagates through I - (alpha/B) Xb^T Xb, which does not expand
    when alpha * max|x|^2 * d <= 1; the bound sums the per-step drift.
    """
    fx = FixedPoint(ring, frac_bits)
    xmax = float(np.abs(fx.decode(x)).max()) if np.size(x) else 0.0
    rate = cfg.learning_rate / cfg.batch_size
    if cfg.learning_rate * xmax ** 2 * cfg.features > 1:
        raise ValueError("learning rate too large for a non-expanding error model")
    per_step = 1 + rate * (1 + cfg.batch_size * xmax * cfg.features)
    return int(np.ceil(cfg.iterations * per_step)) + 1


def predict_logistic(x, w) -> np.ndarray:
    """Class 1 where x.w >= 0, on decoded floats."""
    return (np.asarray(x) @ np.asarray(w) >= 0).astype(np.int64)


# ---------------------------------------------------------------- synthetic data

def synthetic_linear(n: int, seed: int = 0, weights=(0.5, -0.25)) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, len(weights)))
    return x, x @ np.asarray(weights) + rng.normal(0, 0.01, n)


def synthetic_logistic(n: int, seed: int = 0, weights=(1.0, -1.0), margin: float = 0.1):
    """Linearly separable labels in {0, 1} with a gap around the boundary."""
    rng = np.random.default_rng(seed)
    w = np.asarray(weights)
    rows = []
    while len(rows) < n:
        p = rng.uniform(-1, 1, len(w))
        if abs(p @ w) / np.linalg.norm(w) >= margin:
            rows.append(p)
    x = np.array(rows)
    return x, (x @ w >= 0).astype(np.float64)


# ---------------------------------------------------------------- inference

@dataclass
class Model:
    """Layer weights (in, out) as shares; hidden layers use ReLU, the output argmax."""
    weights: list
    activations: tuple = field(default=())

    def __post_init__(self):
        if not self.weights:
            raise ValueError("a model needs at least one layer")
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.shape} then {b.shape}")
        if not self.activations:
            self.activations = ("relu",) * (len(self.weights) - 1) + ("argmax",)

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


def init_mlp_weights(dims, seed: int = 0) -> list:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) floats per layer."""
    rng = np.random.default_rng(seed)
    return [rng.uniform(-1, 1, (a, b)) / np.sqrt(a) for a, b in zip(dims, dims[1:])]


def mlp_infer(ctx: Party, model: Model, x: MShare) -> MShare:
    """One-hot predicted class for each row of x."""
    a = x
    for w, act in zip(model.weights, model.activations):
        a = ml_blocks.matmul(ctx, a, w)
        if act == "relu":
            a = ml_blocks.relu(ctx, a)
    hot, _ = ml_blocks.argmax(ctx, a)
    return hot


def plain_mlp_logits(ring: Ring, weights, x, frac_bits: int) -> np.ndarray:
    a = ring.reduce(x)
    for k, w in enumerate(weights):
        a = plain_matmul(ring, a, w, frac_bits)
        if k < len(weights) - 1:
            a = np.where(ring.signed(a) >= 0, a, 0).astype(np.uint64)
    return a


def svm_infer(ctx: Party, f: MShare, b: MShare, x: MShare) -> MShare:
    """argmax_i F_i . x + b_i as a one-hot over the q classes, per row of x."""
    if f.shape[1] != x.shape[-1] or b.shape != (f.shape[0],):
        raise ValueError(f"shape mismatch: F {f.shape}, b {b.shape}, x {x.shape}")
    scores = ml_blocks.matmul(ctx, x, _transpose(f)) + b
    hot, _ = ml_blocks.argmax(ctx, scores)
    return hot


# ---------------------------------------------------------------- files

def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Features and labels from a CSV with a header row and a "y" column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "y" not in header:
            raise ValueError(f"{path}: no label column named 'y'")
        label = header.index("y")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return np.delete(data, label, axis=1), data[:, label]


def write_csv(path, x, y) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(np.shape(x)[1])] + ["y"])
        for row, label in zip(x, y):
            writer.writerow([*map(repr, map(float, row)), repr(float(label))])


def dump_model(path, weights) -> None:
    """JSON of revealed weights; callers gate this behind an explicit reveal flag."""
    Path(path).write_text(json.dumps({"weights": [np.asarray(w).tolist() for w in weights]}, indent=2))
