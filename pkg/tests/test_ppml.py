import numpy as np
import pytest

from helpers import R64, run_op
from maskmpc import mult, ppml
from maskmpc.ring import FixedPoint
from maskmpc.runtime import run
from maskmpc.sharing import reconstruct, share

FRAC = 13
FX = FixedPoint(R64, FRAC)


def _train(fw, kind, cfg, x, y):
    xe, ye = FX.encode(x), FX.encode(y)
    out, res = run_op(fw, lambda ctx, a, b: ppml.train(ctx, kind, cfg, a, b), [xe, ye])
    return out, res, ppml.plain_train(kind, cfg, xe, ye, R64, FRAC)


def test_config_validation():
    with pytest.raises(ValueError):
        ppml.TrainConfig(0.1, 0, 10, 2)
    with pytest.raises(ValueError, match="underflows"):
        ppml.TrainConfig(1e-6, 64, 10, 2).step_constant(FX)
    cfg = ppml.TrainConfig(0.1, 4, 3, 2)
    assert [b.tolist() for b in cfg.batches(6)] == [[0, 1, 2, 3], [4, 5, 0, 1], [2, 3, 4, 5]]


def test_zero_learning_rate_keeps_weights():
    x, y = ppml.synthetic_linear(32, seed=1)
    out, _, plain = _train("astra", "linreg", ppml.TrainConfig(0.0, 16, 3, 2), x, y)
    assert not out.any() and not plain.any()


def test_zero_residual_batch_leaves_weights():
    x = np.array([[1.0, 0.5], [-0.5, 1.0]] * 8)
    w = np.array([0.5, -0.25])
    cfg = ppml.TrainConfig(0.5, 16, 1, 2)

    def program(ctx):
        with ctx.unmetered():
            xs = share(ctx, 1, FX.encode(x) if ctx.me == 1 else None, shape=x.shape)
            ys = share(ctx, 1, FX.encode(x @ w) if ctx.me == 1 else None, shape=(16,))
            ws = share(ctx, 1, FX.encode(w) if ctx.me == 1 else None, shape=(2,))
        out = ppml.gd_step(ctx, "linreg", ws, xs, ys, cfg.step_constant(FX))
        with ctx.unmetered():
            return reconstruct(ctx, out)

    out = run("astra", program).outputs[1]
    # residuals are within a couple of ulps of zero, so the update is too
    assert np.max(FX.ulp_diff(out, FX.encode(w))) <= 2


@pytest.mark.parametrize("fw", ["astra", "tetrad"])
def test_linreg_tracks_plain_oracle(fw):
    x, y = ppml.synthetic_linear(64, seed=2)
    cfg = ppml.TrainConfig(0.5, 16, 30, 2)
    out, _, plain = _train(fw, "linreg", cfg, x, y)
    assert np.max(FX.ulp_diff(out, plain)) <= ppml.weight_error_bound(cfg, FX.encode(x), R64, FRAC)
    assert np.allclose(FX.decode(out), [0.5, -0.25], atol=0.05)


def test_error_bound_model():
    ones = FX.encode(np.ones((64, 2)))
    # 100 steps of 1 + (0.5 / 16) * (1 + 16 * 2) ulps, plus the final ulp
    assert ppml.weight_error_bound(ppml.TrainConfig(0.5, 16, 100, 2), ones, R64, FRAC) == 205
    with pytest.raises(ValueError):
        ppml.weight_error_bound(ppml.TrainConfig(4.0, 16, 100, 2), ones, R64, FRAC)


def test_sigmoid_of_zero_is_half():
    zeros = np.zeros(4, dtype=np.uint64)
    assert (ppml.plain_sigmoid(R64, FX, zeros) == FX.encode(0.5)).all()


def test_logreg_accuracy():
    x, y = ppml.synthetic_logistic(128, seed=3)
    cfg = ppml.TrainConfig(0.5, 16, 40, 2)
    out, _, plain = _train("astra", "logreg", cfg, x, y)
    assert np.max(FX.ulp_diff(out, plain)) <= ppml.weight_error_bound(cfg, FX.encode(x), R64, FRAC)
    secure = (ppml.predict_logistic(x, FX.decode(out)) == y).mean()
    clear = (ppml.predict_logistic(x, FX.decode(plain)) == y).mean()
    assert abs(secure - clear) <= 0.02 and secure > 0.9


def test_training_is_deterministic():
    x, y = ppml.synthetic_linear(32, seed=4)
    cfg = ppml.TrainConfig(0.5, 16, 2, 2)
    first = _train("swift", "linreg", cfg, x, y)
    second = _train("swift", "linreg", cfg, x, y)
    assert np.array_equal(first[0], second[0])


def _infer(fw, weights, xs, activations=()):
    def program(ctx):
        with ctx.unmetered():
            ws = [share(ctx, 1, FX.encode(w) if ctx.me == 1 else None, shape=w.shape) for w in weights]
            xsh = share(ctx, 1, FX.encode(xs) if ctx.me == 1 else None, shape=xs.shape)
        hot = ppml.mlp_infer(ctx, ppml.Model(ws, activations), xsh)
        with ctx.unmetered():
            return reconstruct(ctx, hot)

    return run(fw, program).outputs[1].argmax(axis=-1)


def test_identity_network_is_argmax():
    rng = np.random.default_rng(5)
    xs = rng.uniform(-1, 1, (50, 4))
    assert np.array_equal(_infer("aby2", [np.eye(4)], xs), xs.argmax(axis=1))


def test_mlp_matches_plain_logits():
    rng = np.random.default_rng(6)
    weights = ppml.init_mlp_weights((16, 8, 4), seed=6)
    xs = rng.uniform(-1, 1, (1000, 16))
    got = _infer("astra", weights, xs)
    logits = R64.signed(ppml.plain_mlp_logits(R64, [FX.encode(w) for w in weights], FX.encode(xs), FRAC))
    assert (got == logits.argmax(axis=1)).mean() >= 0.99


def test_reduced_three_layer_network():
    rng = np.random.default_rng(7)
    weights = ppml.init_mlp_weights((32, 16, 16, 10), seed=7)
    xs = rng.uniform(0, 1, (20, 32))
    got = _infer("tetrad", weights, xs)
    logits = R64.signed(ppml.plain_mlp_logits(R64, [FX.encode(w) for w in weights], FX.encode(xs), FRAC))
    assert (got == logits.argmax(axis=1)).mean() >= 0.9


def test_model_shape_checks():
    with pytest.raises(ValueError, match="chain"):
        ppml.Model([np.zeros((2, 3)), np.zeros((4, 1))])
    assert ppml.Model([np.zeros((2, 3)), np.zeros((3, 1))]).dims == (2, 3, 1)


def _svm(fw, f, b, xs):
    def program(ctx):
        with ctx.unmetered():
            fs = share(ctx, 1, FX.encode(f) if ctx.me == 1 else None, shape=f.shape)
            bs = share(ctx, 1, FX.encode(b) if ctx.me == 1 else None, shape=b.shape)
            xsh = share(ctx, 1, FX.encode(xs) if ctx.me == 1 else None, shape=xs.shape)
        hot = ppml.svm_infer(ctx, fs, bs, xsh)
        with ctx.unmetered():
            return reconstruct(ctx, hot)

    res = run(fw, program)
    return res.outputs[1], res


def test_svm_single_class():
    hot, _ = _svm("astra", np.ones((1, 3)), np.zeros(1), np.ones((2, 3)))
    assert hot.tolist() == [[1], [1]]


@pytest.mark.parametrize("fw", ["astra", "swift"])
def test_svm_random(fw):
    rng = np.random.default_rng(8)
    f, b = rng.uniform(-1, 1, (5, 6)), rng.uniform(-1, 1, 5)
    xs = rng.uniform(-1, 1, (100, 6))
    hot, _ = _svm(fw, f, b, xs)
    assert (hot.argmax(axis=1) == (xs @ f.T + b).argmax(axis=1)).mean() >= 0.97


def test_score_product_cost_ignores_feature_count():
    costs = []
    for n in (4, 64):
        a = np.ones((1, n), dtype=np.uint64)
        _, res = run_op("astra", lambda ctx, x, y: mult.dotp(ctx, x, y), [a, a])
        costs.append(res.meter.summary()["online"])
    assert costs[0] == costs[1]


def test_csv_round_trip_and_errors(tmp_path):
    x, y = ppml.synthetic_linear(5, seed=9)
    path = tmp_path / "d.csv"
    ppml.write_csv(path, x, y)
    x2, y2 = ppml.load_csv(path)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    bad = tmp_path / "bad.csv"
    bad.write_text("x0,y\n1.0,2.0\nfoo,1\n")
    with pytest.raises(ValueError, match="bad.csv:3"):
        ppml.load_csv(bad)
    bad.write_text("x0,x1\n1,2\n")
    with pytest.raises(ValueError, match="'y'"):
        ppml.load_csv(bad)
