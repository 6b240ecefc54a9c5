"""Acceptance criteria 1-11. Test names carry the criterion number (``test_cNN_``);
conftest.py prints one PASS/FAIL line per criterion at the end of the run."""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.linalg import cholesky

from helpers import brute_force_isotonic, design, exact_gp, two_clusters
from leadtime.calibration import calibration_curve, calibration_error, pits, pool_adjacent_violators
from leadtime.cli import held_out_rows, main
from leadtime.dataset import simulate
from leadtime.distributions import ExponentialFamily, GaussianFamily
from leadtime.gp import RBFKernel, SVGPConfig, SVGPModel, elbo, elbo_and_grad, fit_svgp
from leadtime.metrics import build_report, interval_coverage, mape, r2
from leadtime.ngboost import NGBoostConfig, fit_ngboost
from leadtime.pipeline import load_model, make_config, save_model, train
from leadtime.pnn import MLPConfig, init_mlp, loss_and_grads
from leadtime.quantile_gb import GBConfig, fit_gb

TRAINED_KINDS = ("ngboost-exp", "qgb", "pnn", "svgp", "linreg")


def central_fd(f, x, h):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (f(up) - f(down)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# 1 -----------------------------------------------------------------------------------

def test_c01_gradient_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = np.array([rng.normal(), rng.normal(scale=0.5)])
        y = rng.normal(theta[0], 2.0)
        fd = central_fd(lambda t: GaussianFamily.nll(t, y), theta, 1e-6)
        assert rel_err(GaussianFamily.grad(theta, y), fd) < 1e-5
        theta_e = np.array([rng.normal()])
        ye = rng.exponential(2.0)
        fd = central_fd(lambda t: ExponentialFamily.nll(t, ye), theta_e, 1e-6)
        assert rel_err(ExponentialFamily.grad(theta_e, ye), fd) < 1e-5

    model = init_mlp(MLPConfig(hidden=(8, 8), seed=1), 4)
    for k in model.params:
        model.params[k] = model.params[k] + 0.1 * rng.normal(size=model.params[k].shape)
    X, y = rng.normal(size=(16, 4)), rng.normal(size=16)
    _, grads = loss_and_grads(model, X, y, 0.01)
    for k in model.params:
        def f(P, k=k):
            old = model.params[k]
            model.params[k] = P
            value = loss_and_grads(model, X, y, 0.01)[0]
            model.params[k] = old
            return value
        assert rel_err(grads[k], central_fd(f, model.params[k], 1e-4)) < 1e-4, k

    Xg = np.sort(rng.uniform(-3, 3, 10))[:, None]
    yg = np.sin(Xg[:, 0])
    kern = RBFKernel(1.3, np.array([0.8]))
    Z = Xg[::2] + 0.1
    params = SVGPModel(kern, 0.1, Z, rng.normal(size=5),
                       cholesky(kern(Z, Z) + 1e-6 * np.eye(5), lower=True), 1e-6).params()
    _, grads = elbo_and_grad(params, Xg, yg, 10)
    for k in params:
        def f(P, k=k):
            return elbo_and_grad({**params, k: P}, Xg, yg, 10, need_grad=False)[0]
        assert rel_err(grads[k], central_fd(f, params[k], 1e-5)) < 1e-4, k
    assert time.perf_counter() - start < 30


# 2 -----------------------------------------------------------------------------------

def test_c02_natural_gradient_identity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        theta = rng.normal(size=1)
        y = rng.exponential(3.0)
        assert np.array_equal(ExponentialFamily.natural_grad(theta, y), ExponentialFamily.grad(theta, y))
        assert np.array_equal(ExponentialFamily.fisher(theta), np.ones((1, 1)))
        tg = np.array([rng.normal(scale=3.0), rng.normal()])
        sigma2 = math.exp(2 * tg[1])
        inv = np.linalg.inv(GaussianFamily.fisher(tg))
        np.testing.assert_allclose(inv, np.diag([sigma2, 0.5]), rtol=1e-12, atol=1e-12)
        yg = rng.normal()
        np.testing.assert_allclose(GaussianFamily.natural_grad(tg, yg), inv @ GaussianFamily.grad(tg, yg),
                                   rtol=1e-12, atol=1e-12)


# 3 -----------------------------------------------------------------------------------

def test_c03_empirical_fisher():
    rng = np.random.default_rng(2)
    n = 100_000
    theta = np.array([1.5, math.log(2.0)])
    y = rng.normal(theta[0], 2.0, n)
    g = GaussianFamily.grad(np.broadcast_to(theta, (n, 2)), y)
    emp = g.T @ g / n
    exact = GaussianFamily.fisher(theta)
    scale = np.sqrt(np.outer(np.diag(exact), np.diag(exact)))
    # zero entries are compared on the scale of their diagonal neighbours
    assert np.all(np.abs(emp - exact) <= 0.05 * scale)

    theta_e = np.array([math.log(3.0)])
    ye = rng.exponential(3.0, n)
    ge = ExponentialFamily.grad(np.broadcast_to(theta_e, (n, 1)), ye)
    emp_e = ge.T @ ge / n
    assert abs(emp_e[0, 0] - ExponentialFamily.fisher(theta_e)[0, 0]) <= 0.05


# 4 -----------------------------------------------------------------------------------

def test_c04_ngboost_monotone_two_clusters():
    start = time.perf_counter()
    dm, side = two_clusters(400, seed=0)
    model = fit_ngboost(dm, NGBoostConfig("exponential", 200, 0.1, subsample=1.0))
    assert len(model.train_nll) == 201
    assert np.all(np.diff(model.train_nll) <= 1e-12)
    for x, mask in (([-1.0], ~side), ([1.0], side)):
        assert model.predict_dist(x).scale == pytest.approx(dm.y[mask].mean(), rel=0.15)
    assert time.perf_counter() - start < 60


# shared synthetic fits for criteria 5, 10 and 11 ------------------------------------------

@pytest.fixture(scope="module")
def synthetic_fits():
    start = time.perf_counter()
    ds = simulate(8000, 0).to_dataset()
    fits = {kind: train(ds, make_config(kind)) for kind in TRAINED_KINDS}
    test = held_out_rows(fits["linreg"], ds)
    report = build_report({k: f for k, f in fits.items()}, fits["linreg"].design(test))
    elapsed = time.perf_counter() - start
    return ds, fits, test, report, elapsed


# 5 -----------------------------------------------------------------------------------

def test_c05_quantile_gb_constant_feature():
    rng = np.random.default_rng(0)
    dm = design(np.ones(4000), rng.exponential(1.0, 4000))
    model = fit_gb(dm, GBConfig().with_loss("pinball", 0.9), seed=0)
    assert model.predict([[1.0]])[0] == pytest.approx(-math.log(0.1), rel=0.05)


def test_c05_quantile_gb_synthetic_coverage(synthetic_fits):
    _, fits, test, _, _ = synthetic_fits
    qgb = fits["qgb"]
    dm = qgb.design(test)
    dists = qgb.predict_dists(dm.X)
    lo = np.array([d.values[0] for d in dists])
    hi = np.array([d.values[-1] for d in dists])
    assert dists[0].levels[0] == 0.05 and dists[0].levels[-1] == 0.95
    coverage = interval_coverage(dm.y, lo, hi)
    print(f"Q-GB nominal-0.90 coverage on {len(dm.y)} test rows: {coverage:.4f}")
    assert 0.86 <= coverage <= 0.94


# 6 -----------------------------------------------------------------------------------

def test_c06_ngboost_calibration():
    start = time.perf_counter()
    ds = simulate(8000, 0, contamination=0.0).to_dataset()
    fitted = train(ds, make_config("ngboost-exp", {"calibration": "true"}))
    assert fitted.calibration_map is not None
    dm = fitted.design(held_out_rows(fitted, ds))
    raw = calibration_error(calibration_curve(pits(fitted.raw_dists(dm.X), dm.y)))
    recal = calibration_error(calibration_curve(pits(fitted.predict_dists(dm.X), dm.y)))
    print(f"held-out calibration error raw {raw:.4f}, recalibrated {recal:.4f}")
    assert raw < 0.05
    assert recal <= raw + 0.01
    assert time.perf_counter() - start < 300


# 7 -----------------------------------------------------------------------------------

def test_c07_svgp_exactness():
    rng = np.random.default_rng(0)
    X = np.sort(rng.uniform(-3, 3, 10))[:, None]
    y = np.sin(X[:, 0]) + 0.3 * rng.normal(size=10)
    variance, ls, noise = 1.3, 0.8, 0.1
    kern = RBFKernel(variance, np.array([ls]))
    start = SVGPModel(kern, noise, X.copy(), np.zeros(10),
                      cholesky(kern(X, X) + 1e-6 * np.eye(10), lower=True), 1e-6)
    cfg = SVGPConfig(inducing=10, batch_size=10, learning_rate=0.01, steps=3000, train_hyperparameters=False)
    fitted = fit_svgp(design(X, y), cfg, model=start)
    Xs = np.linspace(-4, 4, 41)[:, None]
    lml, mean, var = exact_gp(X, y, Xs, variance, [ls], noise)
    got_mean, got_var = fitted.predict_moments(Xs)
    assert elbo(fitted, X, y) == pytest.approx(lml, abs=1e-3)
    np.testing.assert_allclose(got_mean, mean, atol=1e-3)
    np.testing.assert_allclose(got_var, var, atol=1e-3)


# 8 -----------------------------------------------------------------------------------

def test_c08_pav_brute_force():
    values = (0.0, 0.25, 0.5, 0.75, 1.0)
    checked = 0
    for n in range(2, 7):
        for seq in itertools.product(values, repeat=n):
            if all(a <= b for a, b in zip(seq, seq[1:])):
                continue
            np.testing.assert_allclose(pool_adjacent_violators(seq), brute_force_isotonic(seq), atol=1e-12)
            checked += 1
    assert checked > 15_000


# 9 -----------------------------------------------------------------------------------

def test_c09_metrics_worked_examples():
    assert abs(r2([0.0, 1.0, 2.0], [0.0, 1.0, 1.0]) - 0.5) <= 1e-12
    assert abs(mape([1.0, 2.0], [1.1, 1.8]) - 10.0) <= 1e-12
    assert abs(mape([1.0, 2.0], [2.0, 4.0]) - 100.0) <= 1e-12
    assert r2([1.0, 2.0, 4.0], [1.0, 2.0, 4.0]) == 1.0

    rng = np.random.default_rng(3)
    X = rng.normal(size=(300, 2))
    dm = design(X, 5.0 + X[:, 0] + rng.normal(size=300), statusquo=np.full(300, 5.0))
    model = fit_ngboost(dm, NGBoostConfig("gaussian", 50, 0.1))
    row = build_report({"ngboost-normal": model}, dm).row("ngboost-normal")
    assert row.r2_mean == row.r2_median
    assert row.mape_mean == row.mape_median


# 10 ----------------------------------------------------------------------------------

def test_c10_models_beat_status_quo(synthetic_fits):
    _, _, _, report, elapsed = synthetic_fits
    print(report.to_text(), end="")
    print(f"generate + train + evaluate: {elapsed:.1f} s")
    baseline = report.row("status_quo").r2_mean
    for kind in TRAINED_KINDS:
        assert report.row(kind).r2_mean > baseline, kind
    assert elapsed < 600


# 11 ----------------------------------------------------------------------------------

def _cli_pipeline(root):
    root.mkdir()
    data = root / "d.csv"
    assert main(["generate", "--n", "800", "--seed", "5", "--out", str(data)]) == 0
    settings = {
        "ngboost-exp": "n_estimators = 60\n",
        "ngboost-normal": "n_estimators = 60\n",
        "pnn": "hidden = 32,32\nepochs = 5\n",
        "svgp": "inducing = 20\nsteps = 100\nbatch_size = 300\n",
        "qgb": "n_estimators = 30\n",
        "linreg": "",
    }
    models = []
    for kind, text in settings.items():
        (root / f"{kind}.txt").write_text(f"model = {kind}\n{text}")
        out = root / f"{kind}.json"
        assert main(["train", "--config", str(root / f"{kind}.txt"), "--data", str(data), "--out", str(out)]) == 0
        models += ["--model", str(out)]
    assert main(["evaluate", *models, "--data", str(data), "--out", str(root / "report.csv")]) == 0
    return root


def test_c11_pipeline_byte_identical(tmp_path):
    a, b = _cli_pipeline(tmp_path / "a"), _cli_pipeline(tmp_path / "b")
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    assert "report_reliability.svg" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_c11_round_trip_all_kinds(synthetic_fits, tmp_path):
    ds, fits, _, _, _ = synthetic_fits
    fits = dict(fits)
    fits["ngboost-normal"] = train(ds, make_config("ngboost-normal"))
    rows = np.random.default_rng(4).choice(ds.n, 100, replace=False)
    sample = ds.subset(np.sort(rows))
    for kind, fitted in fits.items():
        path = tmp_path / f"{kind}.json"
        save_model(fitted, path)
        loaded = load_model(path)
        X = fitted.design(sample).X
        np.testing.assert_allclose(loaded.predict(X), fitted.predict(X), rtol=1e-12, atol=1e-12)
        if not fitted.is_point:
            for a, b in zip(loaded.predict_dists(X), fitted.predict_dists(X)):
                for k, v in b.params().items():
                    np.testing.assert_allclose(a.params()[k], v, rtol=1e-12, atol=1e-12)
