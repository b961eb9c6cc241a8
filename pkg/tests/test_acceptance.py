"""Acceptance criteria 1-7, one PASS/FAIL line each.

Criteria 4-6 run the desk presets end to end and take most of the suite's
wall time. Every test reports its measured values before asserting.
"""

import time

import numpy as np
import pytest

from pcha.basis import build_kernel_matrix, design_matrix
from pcha.cli import main
from pcha.experiments import resolve_config, run_study
from pcha.losses import LossKind, RiskState, grad_alpha, path_gradient, risk
from pcha.pc import (
    PCWorkingModel,
    beta_of_alpha_oracle,
    beta_stats_streaming,
    eigenvector_matrix_oracle,
)
from pcha.solvers import (
    SolverConfig,
    fit_hagl,
    fit_hal,
    fit_har,
    fit_mode,
    hal_objective,
    make_state,
    project_out,
    warm_start_hagl,
)

cp = pytest.importorskip("cvxpy")


def _line(k, ok, detail, elapsed, limit=None):
    budget = f" (limit {limit:.0f} s)" if limit else ""
    return f"CRITERION {k}: {'PASS' if ok else 'FAIL'} - {detail}; {elapsed:.1f} s{budget}"


# --- 1 ------------------------------------------------------------------------

def test_criterion_1_algebraic_identities(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(101)
    worst = dict(gram=0, beta_l2=0.0, orth=0.0, stream=0.0, suff=0.0)
    for _ in range(200):
        n, d = int(r.integers(1, 31)), int(r.integers(1, 4))
        X = r.random((n, d))
        if r.random() < 0.3:
            X = np.round(X * 4) / 4  # ties
        m = PCWorkingModel.build(X)
        H = design_matrix(m.spec, m.X_train).astype(np.int64)
        worst["gram"] = max(worst["gram"], int(np.abs(build_kernel_matrix(m.spec) - H @ H.T).max()))
        alpha = r.standard_normal(m.rank)
        beta = beta_of_alpha_oracle(m, alpha)
        scale = max(1.0, np.linalg.norm(alpha))
        worst["beta_l2"] = max(worst["beta_l2"],
                               abs(np.linalg.norm(beta) - np.linalg.norm(alpha)) / scale)
        G = m.Z.T @ m.Z
        off = np.abs(G - np.diag(np.diag(G))).max(initial=0.0)
        worst["orth"] = max(worst["orth"], off / max(1.0, m.D[0] ** 2))
        stats = beta_stats_streaming(m, alpha)
        gap = max(abs(stats.l1 - np.abs(beta).sum()) / max(1.0, np.abs(beta).sum()),
                  abs(stats.l2 - np.linalg.norm(beta)) / max(1.0, np.linalg.norm(beta)))
        worst["stream"] = max(worst["stream"], gap)
        y = r.standard_normal(n)
        st = make_state(m, y, LossKind.MSE)
        a_ls = (m.U.T @ (y - st.intercept)) / m.D
        Hf = H.astype(float)
        Hc = np.column_stack([np.ones(n), Hf])
        coef = np.linalg.lstsq(Hc, y, rcond=None)[0]
        full = float(np.mean((y - Hc @ coef) ** 2))
        worst["suff"] = max(worst["suff"], abs(risk(st, LossKind.MSE, a_ls) - full))
    elapsed = time.perf_counter() - t0
    ok = (worst["gram"] == 0 and worst["beta_l2"] < 1e-8 and worst["orth"] < 1e-8
          and worst["stream"] < 1e-9 and worst["suff"] < 1e-7 and elapsed < 30)
    detail = ("200 instances; gram max diff {gram}, beta-l2 gap {beta_l2:.1e}, "
              "orthogonality {orth:.1e}, streaming gap {stream:.1e}, "
              "sufficiency gap {suff:.1e}").format(**worst)
    report(_line(1, ok, detail, elapsed, 30))
    assert ok


# --- 2 ------------------------------------------------------------------------

def _fd_rel_err(state, kind, alpha, h):
    """Relative error of the multiplicative-path gradient against central differences."""
    D = path_gradient(state, kind, alpha)
    g = grad_alpha(state, kind, alpha)
    eps = 1e-6
    fd_g = np.empty_like(alpha)
    for j in range(alpha.size):
        e = np.zeros_like(alpha)
        e[j] = eps
        fd_g[j] = (risk(state, kind, alpha + e) - risk(state, kind, alpha - e)) / (2 * eps)
    fd_path = (risk(state, kind, (1 + eps * h) * alpha)
               - risk(state, kind, (1 - eps * h) * alpha)) / (2 * eps)
    e1 = np.linalg.norm(fd_g - g) / max(np.linalg.norm(g), 1e-3)
    e2 = abs(fd_path - D @ h) / max(abs(D @ h), 1e-3)
    return max(e1, e2)


def test_criterion_2_gradients_and_scores(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(202)
    grad_err = 0.0
    for case in range(100):
        kind = (LossKind.MSE, LossKind.LOGISTIC)[case % 2]
        n = int(r.integers(5, 16))
        m = PCWorkingModel.build(r.random((n, int(r.integers(1, 3)))))
        y = r.standard_normal(n) if kind == LossKind.MSE else np.where(r.random(n) < .5, -1., 1.)
        state = RiskState(m.Z, y, float(r.normal()))
        alpha = 0.3 * r.standard_normal(m.rank)
        grad_err = max(grad_err, _fd_rel_err(state, kind, alpha, r.standard_normal(m.rank)))

    hagl_score = hal_kkt = har_score = 0.0
    for kind in (LossKind.MSE, LossKind.LOGISTIC):
        X = r.random((14, 2))
        f = np.sin(4 * X.sum(1))
        y = (f + 0.3 * r.standard_normal(14) if kind == LossKind.MSE
             else np.where(r.random(14) < 1 / (1 + np.exp(-2 * f)), 1.0, -1.0))
        m = PCWorkingModel.build(X)
        st = make_state(m, y, kind)
        # HAGL: scores along tangent directions orthogonal to the constraint gradient
        est = fit_mode(m, y, "hagl", kind, 0.05 * m.D[0] ** 2 / m.n)
        st.intercept = est.intercept
        g = grad_alpha(st, kind, est.alpha)
        for _ in range(20):
            h = project_out(r.standard_normal(m.rank), est.constraint_direction)
            hagl_score = max(hagl_score, abs(g @ h) / np.linalg.norm(h))
        # HAL KKT
        st = make_state(m, y, kind)
        lam = 0.02
        est = fit_hal(st, kind, lam, SolverConfig(grad_tol=1e-10, inner_max_iter=200000))
        st.intercept = est.intercept
        g = grad_alpha(st, kind, est.alpha)
        act = np.abs(est.alpha) > 1e-12
        kkt = max(np.abs(g[act] + lam * np.sign(est.alpha[act])).max(initial=0),
                  np.maximum(np.abs(g[~act]) - lam, 0).max(initial=0))
        hal_kkt = max(hal_kkt, kkt)
        # HAR: scores orthogonal to alpha vanish
        st = make_state(m, y, kind)
        est = fit_har(st, kind, lam)
        st.intercept = est.intercept
        g = grad_alpha(st, kind, est.alpha)
        for _ in range(20):
            h = project_out(r.standard_normal(m.rank), est.alpha)
            har_score = max(har_score, abs(g @ h) / np.linalg.norm(h))
    elapsed = time.perf_counter() - t0
    ok = (grad_err < 1e-5 and hagl_score < 1e-6 and hal_kkt < 1e-6 and har_score < 1e-6
          and elapsed < 60)
    detail = (f"gradient rel err {grad_err:.1e} (100 cases), HAGL tangent score "
              f"{hagl_score:.1e}, HAL KKT {hal_kkt:.1e}, HAR orthogonal score {har_score:.1e}")
    report(_line(2, ok, detail, elapsed, 60))
    assert ok


# --- 3 ------------------------------------------------------------------------

_CONIC = dict(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)


def test_criterion_3_solver_oracles(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(303)
    hagl_gap = hal_gap = har_gap = 0.0
    for _ in range(30):
        n, d = int(r.integers(4, 21)), int(r.integers(1, 3))
        X = r.random((n, d))
        y = np.sin(4 * X.sum(1)) + 0.3 * r.standard_normal(n)
        m = PCWorkingModel.build(X)
        st = make_state(m, y, "mse")
        lam = 10 ** r.uniform(-2, 0) * m.D[0] ** 2 / n
        C, a0 = warm_start_hagl(st, m, "mse", lam)
        est = fit_hagl(st, m, "mse", C, a0)
        E = eigenvector_matrix_oracle(m)
        a = cp.Variable(m.rank)
        prob = cp.Problem(cp.Minimize(cp.sum_squares(y - st.intercept - m.Z @ a) / n),
                          [cp.norm1(E @ a) <= C])
        prob.solve(**_CONIC)
        hagl_gap = max(hagl_gap, abs(est.diagnostics["final_risk"] - prob.value))
    for kind in (LossKind.MSE, LossKind.LOGISTIC):
        for _ in range(5):
            n = int(r.integers(8, 21))
            X = r.random((n, 2))
            f = np.sin(4 * X.sum(1))
            y = (f + 0.3 * r.standard_normal(n) if kind == LossKind.MSE
                 else np.where(r.random(n) < 1 / (1 + np.exp(-2 * f)), 1.0, -1.0))
            m = PCWorkingModel.build(X)
            st = make_state(m, y, kind)
            lam = 0.01
            est = fit_hal(st, kind, lam, SolverConfig(grad_tol=1e-11, inner_max_iter=200000))
            a, b = cp.Variable(m.rank), cp.Variable()
            if kind == LossKind.MSE:
                obj = cp.sum_squares(y - st.intercept - m.Z @ a) / n
            else:
                obj = cp.sum(cp.logistic(-cp.multiply(y, m.Z @ a + b))) / n
            prob = cp.Problem(cp.Minimize(obj + lam * cp.norm1(a)))
            prob.solve(**_CONIC)
            st.intercept = est.intercept
            hal_gap = max(hal_gap, abs(hal_objective(st, kind, est.alpha, lam) - prob.value))
            # HAR against the dense penalized normal equations
            st = make_state(m, y, "mse")
            est = fit_har(st, "mse", lam)
            dense = np.linalg.solve(m.Z.T @ m.Z + n * lam * np.eye(m.rank),
                                    m.Z.T @ (y - st.intercept))
            har_gap = max(har_gap, np.abs(est.alpha - dense).max())
    elapsed = time.perf_counter() - t0
    ok = hagl_gap < 1e-4 and hal_gap < 1e-6 and har_gap < 1e-8 and elapsed < 300
    detail = (f"HAGL risk gap {hagl_gap:.1e} (30 instances), HAL objective gap "
              f"{hal_gap:.1e}, HAR normal-equation gap {har_gap:.1e}")
    report(_line(3, ok, detail, elapsed, 300))
    assert ok


# --- 4-6: desk-scale studies ----------------------------------------------------

def _slope(result, mode, metric, d=None):
    for s in result.slopes:
        if s["mode"] == mode and s["metric"] == metric and (d is None or s["d"] == d):
            return s["slope"]
    raise KeyError((mode, metric, d))


def test_criterion_4_norm_scaling(report):
    t0 = time.perf_counter()
    res = run_study(resolve_config("norms", "desk", seed=1))
    elapsed = time.perf_counter() - t0
    a1 = _slope(res, "hal", "alpha_l1")
    a2 = _slope(res, "hal", "alpha_l2")
    b1 = {m: _slope(res, m, "beta_l1") for m in ("har", "hal", "hagl")}
    ok = (-0.60 <= a1 <= -0.25 and -0.70 <= a2 <= -0.30
          and all(-0.15 <= v <= 0.15 for v in b1.values()) and elapsed < 900)
    detail = (f"HAL alpha-l1 slope {a1:.3f} in [-0.60,-0.25], alpha-l2 slope {a2:.3f} in "
              f"[-0.70,-0.30], beta-l1 slopes " +
              ", ".join(f"{m} {v:.3f}" for m, v in b1.items()) + " in [-0.15,0.15]")
    report(_line(4, ok, detail, elapsed, 900))
    assert ok


def test_criterion_5_convergence_rates(report):
    t0 = time.perf_counter()
    res = run_study(resolve_config("rates", "desk", seed=1))
    elapsed = time.perf_counter() - t0
    lin = {(m, d): _slope(res, m, "test_mse_linear", d)
           for m in ("har", "hal", "hagl") for d in (1, 3)}
    har = {m: _slope(res, m, "test_mse_harmonic", 3) for m in ("har", "hal", "hagl")}
    ok = (all(v <= -0.45 for v in lin.values()) and all(v <= -0.70 for v in har.values())
          and elapsed < 1200)
    detail = ("linear slopes " + ", ".join(f"{m}/d{d} {v:.3f}" for (m, d), v in lin.items())
              + " (<= -0.45); harmonic d3 slopes "
              + ", ".join(f"{m} {v:.3f}" for m, v in har.items()) + " (<= -0.70)")
    report(_line(5, ok, detail, elapsed, 1200))
    assert ok


def test_criterion_6_ate(report):
    t0 = time.perf_counter()
    res = run_study(resolve_config("ate", "desk", seed=1))
    elapsed = time.perf_counter() - t0
    tables = res.summary["tables"]
    cells, ok = [], elapsed < 1800
    for mode in ("hal", "hagl"):
        for variant, row in tables[mode].items():
            good = abs(row["bias"]) <= 0.08 and 0.85 <= row["oracle_coverage"] <= 0.98
            ok &= good
            cells.append(f"{mode}/{variant} bias {row['bias']:.4f} "
                         f"coverage {row['oracle_coverage']:.3f}")
    better = [m for m in tables if tables[m]["with_undersmoothing"]["mean_abs_eic_mean"]
              < tables[m]["no_undersmoothing"]["mean_abs_eic_mean"]]
    ok &= len(better) >= 2
    detail = "; ".join(cells) + f"; |Pn D| reduced by undersmoothing for {len(better)}/3 modes"
    report(_line(6, ok, detail, elapsed, 1800))
    assert ok


# --- 7 ------------------------------------------------------------------------

_TINY = {
    "norms": ["--set", "n_grid=[20,30,40]", "--set", "grid_size=3", "--set", "folds=2"],
    "rates": ["--set", "n_grid=[20,30,40]", "--set", "grid_size=3", "--set", "folds=2",
              "--set", 'panels=[["linear",2]]'],
    "ate": ["--set", "n_grid=[60]", "--set", "grid_size=3", "--set", "folds=2"],
}


def test_criterion_7_determinism(report, tmp_path, capsys):
    t0 = time.perf_counter()
    same = {}
    for study, extra in _TINY.items():
        outs = []
        for k in range(2):
            d = tmp_path / f"{study}{k}"
            rc = main(["study", study, "--seed", "11", "--replicates", "2",
                       "--out-dir", str(d)] + extra)
            assert rc == 0
            outs.append((d / f"{study}_desk_seed11.csv").read_bytes())
        same[study] = outs[0] == outs[1]
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    ok = all(same.values())
    detail = "byte-identical CSV on repeat: " + ", ".join(
        f"{s} {'yes' if v else 'no'}" for s, v in same.items())
    report(_line(7, ok, detail, elapsed))
    assert ok
