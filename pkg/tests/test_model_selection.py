import numpy as np
import pytest

from pcha.losses import LossKind
from pcha.model_selection import cv_select, default_grid, make_folds, validation_risk
from pcha.pc import PCWorkingModel
from pcha.solvers import fit_mode


def test_fold_sizes_and_determinism():
    p = make_folds(6, 3, seed=1)
    assert np.bincount(p.folds).tolist() == [2, 2, 2]
    assert sorted(np.bincount(make_folds(5, 3, seed=1).folds).tolist()) == [1, 2, 2]
    assert np.array_equal(make_folds(50, 4, 9).folds, make_folds(50, 4, 9).folds)
    assert not np.array_equal(make_folds(50, 4, 9).folds, make_folds(50, 4, 10).folds)
    tr, va = p.split(0)
    assert np.intersect1d(tr, va).size == 0 and tr.size + va.size == 6


def test_fold_errors():
    with pytest.raises(ValueError):
        make_folds(3, 4, 0)
    with pytest.raises(ValueError):
        make_folds(10, 1, 0)


def test_default_grid(rng):
    m = PCWorkingModel.build(rng.random((20, 2)))
    g = default_grid(m)
    assert g.size == 20 and np.all(np.diff(g) < 0)
    scale = m.D[0] ** 2 / m.n
    assert np.isclose(g[0], 1e2 * scale) and np.isclose(g[-1], 1e-6 * scale)


def test_validation_risk():
    assert validation_risk("mse", np.array([1.0, 2.0]), np.array([1.0, 0.0])) == 2.0
    assert np.isclose(validation_risk("logistic", np.array([1.0]), np.array([0.0])), np.log(2))


def test_single_value_grid_matches_direct_fit(rng):
    X = rng.random((30, 2))
    y = X.sum(1) + 0.1 * rng.standard_normal(30)
    lam = 0.01
    res = cv_select(X, y, "hal", "mse", make_folds(30, 3, 2, grid=[lam]))
    assert res.selected == lam
    m = PCWorkingModel.build(X)
    direct = fit_mode(m, y, "hal", "mse", lam)
    assert np.allclose(res.refit.alpha, direct.alpha)


def test_pure_noise_prefers_heavy_shrinkage():
    hits = 0
    for t in range(50):
        r = np.random.default_rng(1000 + t)
        X = r.random((30, 2))
        y = r.standard_normal(30)
        res = cv_select(X, y, "har", "mse", make_folds(30, 3, t, grid=[1e-4, 1e4]))
        hits += res.selected == 1e4
    assert hits >= 48


def test_ties_go_to_stronger_regularization(rng):
    X = rng.random((12, 2))
    y = np.full(12, 3.0)
    res = cv_select(X, y, "hal", "mse", make_folds(12, 3, 0, grid=[1.0, 0.1, 0.01]))
    assert res.selected == 1.0


def test_all_failed_grid_raises(rng):
    X = rng.random((12, 2))
    with pytest.raises(RuntimeError, match="every grid point"):
        cv_select(X, np.full(12, 3.0), "hagl", "mse", make_folds(12, 3, 0, grid=[1.0, 0.1]))


def test_no_leakage_audit(rng):
    X = rng.random((24, 3)) * 10
    y = X[:, 0] + rng.standard_normal(24)
    plan = make_folds(24, 4, 5, grid=[0.1, 0.01])
    res = cv_select(X, y, "har", "mse", plan, keep_models=True)
    for v, model in enumerate(res.fold_models):
        tr, va = plan.split(v)
        assert model.n == tr.size
        # knots are exactly the rescaled training rows, in order
        assert np.array_equal(model.X_train, model.scaling.apply(X[tr]))
        # the fold scaling comes from training rows only
        assert np.array_equal(model.scaling.lo, X[tr].min(0))
        assert np.array_equal(model.scaling.hi, X[tr].max(0))
        raw_knots = {tuple(r) for r in X[tr]}
        assert not any(tuple(r) in raw_knots for r in X[va])


def test_threads_do_not_change_results(rng):
    X = rng.random((30, 2))
    y = np.sin(3 * X[:, 0]) + 0.2 * rng.standard_normal(30)
    plan = make_folds(30, 3, 4, grid=np.geomspace(1, 1e-4, 5))
    a = cv_select(X, y, "hal", "mse", plan, threads=1)
    b = cv_select(X, y, "hal", "mse", plan, threads=3)
    assert np.array_equal(a.fold_risk, b.fold_risk) and a.selected == b.selected


def test_logistic_cv_and_hagl_cv(rng):
    X = rng.random((30, 2))
    p = 1 / (1 + np.exp(-4 * (X[:, 0] - 0.5)))
    yb = (rng.random(30) < p).astype(float)
    res = cv_select(X, yb, "hal", LossKind.LOGISTIC, make_folds(30, 3, 1, grid=[0.1, 0.01]))
    assert np.isfinite(res.mean_risk).all()
    y = X.sum(1) + 0.1 * rng.standard_normal(30)
    m = PCWorkingModel.build(X)
    res = cv_select(X, y, "hagl", "mse", make_folds(30, 3, 1).with_grid(default_grid(m, 4)),
                    full_model=m)
    assert res.refit.diagnostics["lambda_har"] == res.selected
