"""Seeded data-generating processes and the three simulation studies.

Every replicate draws its data from a generator seeded by
``derive_seed(master, study, ...)``, so a replicate's numbers do not depend
on which other replicates ran or in what order. Results are long-format
records ``(study, mode, d, n, replicate, metric, value)`` plus fitted
log-log slopes and a summary dict.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from .causal import (
    CausalDataset,
    counterfactual_means,
    eic,
    fit_outcome,
    outcome_model,
    plugin_ate,
    tau_threshold,
    undersmooth,
    undersmooth_grid,
)
from .losses import LossKind
from .model_selection import cv_select, make_folds
from .pc import PCWorkingModel, beta_stats_streaming
from .rng import derive_seed, generator, normal
from .solvers import Mode, SolverConfig

log = logging.getLogger(__name__)

J_ZERO_TOL = 1e-10


class DGPKind(str, Enum):
    OSCILLATORY_1D = "oscillatory_1d"
    ADDITIVE_LINEAR = "linear"
    ADDITIVE_HARMONIC = "harmonic"
    ATE_STRUCTURAL = "ate_structural"


@dataclass(frozen=True)
class RegressionData:
    X: np.ndarray
    y: np.ndarray
    truth: np.ndarray  # noise-free regression function at X


# --- data-generating processes ----------------------------------------------

def psi_oscillatory(x):
    x = np.asarray(x, float)
    return 2.0 * np.sin(8.0 * np.pi * x ** 2) / x


def gen_oscillatory(n, seed, noise_sd=2.0):
    """X ~ U(0, 1], Y = 2 sin(8 pi X^2) / X + N(0, noise_sd^2)."""
    rng = generator(seed, "oscillatory")
    x = 1.0 - rng.random(n)  # (0, 1]: the target is singular-looking at 0
    f = psi_oscillatory(x)
    return RegressionData(x[:, None], f + normal(rng, 0.0, noise_sd, n), f)


def psi_linear(X):
    X = np.atleast_2d(X)
    return X.sum(axis=1) / np.sqrt(X.shape[1])


def psi_harmonic(X):
    X = np.atleast_2d(X)
    return np.sin(2.0 * np.pi * X).sum(axis=1) / np.sqrt(X.shape[1])


_TARGETS = {DGPKind.ADDITIVE_LINEAR: psi_linear, DGPKind.ADDITIVE_HARMONIC: psi_harmonic}


def gen_additive(n, d, target, noise_sd=0.3, seed=0):
    """X ~ U([0,1]^d), Y = psi_0(X) + N(0, noise_sd^2)."""
    psi = _TARGETS[DGPKind(target)]
    rng = generator(seed, "additive", d)
    X = rng.random((n, d))
    f = psi(X)
    return RegressionData(X, f + normal(rng, 0.0, noise_sd, n), f)


def ate_propensity(W):
    W = np.atleast_2d(W)
    w1, w2 = W[:, 0], W[:, 1]
    return 1.0 / (1.0 + np.exp(-(w1 + 0.5 * w2 + w1 * w2 + 0.3 * w2 ** 2)))


def ate_outcome_mean(W):
    W = np.atleast_2d(W)
    w1, w2 = W[:, 0], W[:, 1]
    return 2 * w1 - 2 * w2 ** 2 + w2 + w1 * w2 + 0.5


def gen_ate(n, seed, w2_sd=0.5, noise_sd=0.5, eps_pos=1e-3):
    """W1 ~ U(-2, 2), W2 ~ N(0, w2_sd^2), A ~ Bern(pi1(W)), Y free of A.

    The true average treatment effect is 0. The logit is unbounded in W2,
    so at n=300 a few percent of samples hold a propensity beyond 1e-3 of
    0 or 1; the studies pass a smaller ``eps_pos`` rather than alter the law.
    """
    rng = generator(seed, "ate")
    w1 = rng.uniform(-2.0, 2.0, n)
    w2 = normal(rng, 0.0, w2_sd, n)
    W = np.column_stack([w1, w2])
    pi1 = ate_propensity(W)
    A = (rng.random(n) < pi1).astype(float)
    Y = ate_outcome_mean(W) + normal(rng, 0.0, noise_sd, n)
    return CausalDataset(W, A, Y, pi1, eps_pos)


# --- slopes -------------------------------------------------------------------

def estimate_slope(pairs):
    """OLS of log(value) on log(n); returns (slope, standard error).

    Nonpositive values are dropped with a warning. Needs at least three
    distinct n; the standard error is nan with exactly two residual degrees
    of freedom missing (three points give one).
    """
    kept = []
    for n, v in pairs:
        if not (v > 0 and np.isfinite(v)):
            log.warning("dropping nonpositive value %r at n=%r from slope fit", v, n)
            continue
        kept.append((float(n), float(v)))
    if len({n for n, _ in kept}) < 3:
        raise ValueError("slope estimation needs values at three or more distinct n")
    x = np.log([n for n, _ in kept])
    y = np.log([v for _, v in kept])
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = len(x) - 2
    if dof > 0:
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(A.T @ A)
        se = float(np.sqrt(cov[1, 1]))
    else:
        se = float("nan")
    return float(coef[1]), se


# --- configuration ------------------------------------------------------------

STUDIES = ("norms", "rates", "ate")
PRESETS = ("desk", "paper")


@dataclass(frozen=True)
class StudyConfig:
    study: str
    preset: str = "desk"
    seed: int = 1
    modes: tuple = ("har", "hal", "hagl")
    n_grid: tuple = (100, 200, 400, 800)
    replicates: int = 5
    folds: int = 3
    grid_size: int = 20
    # rates: (target, d) panels
    panels: tuple = ()
    n_test: int = 1000
    noise_sd: float | None = None
    # ate
    undersmooth: bool = True
    # positivity floor for the simulated propensities (see gen_ate)
    eps_pos: float = 1e-6
    # "per_rep": CV and tau in every replicate; "once": on an initial sample
    protocol: str = "per_rep"
    # HAGL solver budget for study fits
    admm_max_iter: int = 400
    admm_tol: float = 1e-4
    hagl_polish_iter: int = 3
    threads: int = 1

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"unknown study {self.study!r}; choose from {STUDIES}")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {PRESETS}")
        for m in self.modes:
            Mode(m)
        if self.replicates < 1 or self.folds < 2 or self.grid_size < 1:
            raise ValueError("replicates >= 1, folds >= 2 and grid_size >= 1 required")
        if self.protocol not in ("once", "per_rep"):
            raise ValueError("protocol must be 'once' or 'per_rep'")
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "panels", tuple((str(t), int(d)) for t, d in self.panels))

    def solver_config(self):
        return SolverConfig(admm_max_iter=self.admm_max_iter, admm_tol=self.admm_tol,
                            max_iter=self.hagl_polish_iter, polish="auto")

    def to_dict(self):
        out = asdict(self)
        out["modes"] = list(self.modes)
        out["n_grid"] = list(self.n_grid)
        out["panels"] = [list(p) for p in self.panels]
        return out


_PRESET_VALUES = {
    ("norms", "desk"): dict(n_grid=(100, 200, 400, 800, 1600), replicates=5, folds=3,
                            grid_size=20),
    ("norms", "paper"): dict(n_grid=(100, 200, 400, 800, 1600, 3200), replicates=10,
                             folds=3, grid_size=20, admm_max_iter=2000, admm_tol=1e-6,
                             hagl_polish_iter=50),
    ("rates", "desk"): dict(n_grid=(100, 200, 400, 800), replicates=5, folds=3, grid_size=12,
                            panels=(("linear", 1), ("linear", 3), ("harmonic", 3))),
    ("rates", "paper"): dict(n_grid=(400, 600, 800, 1000, 1250, 1500), replicates=10, folds=3,
                             grid_size=20, admm_max_iter=2000, admm_tol=1e-6,
                             hagl_polish_iter=50,
                             panels=tuple((t, d) for t in ("linear", "harmonic")
                                          for d in (3, 5, 10))),
    ("ate", "desk"): dict(n_grid=(300,), replicates=200, folds=5, grid_size=12,
                          protocol="once"),
    ("ate", "paper"): dict(n_grid=(300,), replicates=500, folds=5, grid_size=20,
                           admm_max_iter=2000, admm_tol=1e-6, hagl_polish_iter=50,
                           protocol="once"),
}


def resolve_config(study, preset="desk", **overrides):
    """Preset values for (study, preset) with explicit overrides; unknown keys rejected."""
    if study not in STUDIES:
        raise ValueError(f"unknown study {study!r}; choose from {STUDIES}")
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    known = {f.name for f in fields(StudyConfig)}
    bad = sorted(set(overrides) - known)
    if bad:
        raise ValueError(f"unknown configuration keys: {', '.join(bad)}")
    values = dict(_PRESET_VALUES[(study, preset)])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return StudyConfig(study=study, preset=preset, **values)


# --- results -----------------------------------------------------------------

RECORD_FIELDS = ("study", "mode", "d", "n", "replicate", "metric", "value")


@dataclass
class StudyResult:
    config: StudyConfig
    records: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add(self, mode, d, n, rep, metric, value):
        self.records.append((self.config.study, str(mode), int(d), int(n), int(rep),
                             metric, float(value)))

    def sorted_records(self):
        return sorted(self.records, key=lambda r: r[:6])

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for rec in self.sorted_records():
            w.writerow(rec[:6] + (repr(rec[6]),))
        return buf.getvalue()

    def to_json(self):
        payload = {
            "config": self.config.to_dict(),
            "master_seed": self.config.seed,
            "n_records": len(self.records),
            "slopes": self.slopes,
            "summary": self.summary,
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"

    def values(self, mode, metric, d=None):
        """{n: [values over replicates]} for one (mode, metric[, d])."""
        out = {}
        for _, m, dd, n, _, met, v in self.sorted_records():
            if m == mode and met == metric and (d is None or dd == d):
                out.setdefault(n, []).append(v)
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _slope_entry(result, mode, metric, d, means):
    pairs = sorted(means.items())
    try:
        slope, se = estimate_slope(pairs)
    except ValueError as exc:
        log.warning("no slope for %s/%s d=%s: %s", mode, metric, d, exc)
        slope, se = float("nan"), float("nan")
    entry = dict(mode=mode, metric=metric, d=d, slope=slope, stderr=se,
                 points=[[n, v] for n, v in pairs])
    result.slopes.append(entry)
    return entry


# --- drivers -----------------------------------------------------------------

NORM_METRICS = ("alpha_l2", "alpha_l1", "alpha_linf", "beta_l1", "J_n")


def run_norm_study(config):
    """CV fits on the oscillatory DGP; norms of alpha and beta(alpha) versus n."""
    if isinstance(config, str):
        config = resolve_config("norms", config)
    result = StudyResult(config)
    scfg = config.solver_config()
    noise = 2.0 if config.noise_sd is None else config.noise_sd
    identity_gap = 0.0
    for n in config.n_grid:
        for rep in range(config.replicates):
            data = gen_oscillatory(n, derive_seed(config.seed, "norms", "data", n, rep), noise)
            model = PCWorkingModel.build(data.X)
            plan = make_folds(n, config.folds, derive_seed(config.seed, "norms", "folds", n, rep))
            for mode in config.modes:
                cv = cv_select(data.X, data.y, mode, LossKind.MSE, _with_grid(plan, model, config),
                               config=scfg, full_model=model, threads=config.threads)
                a = cv.refit.alpha
                stats = beta_stats_streaming(model, a)
                l2 = float(np.linalg.norm(a))
                if model.rank == model.n:
                    identity_gap = max(identity_gap, abs(stats.l2 - l2) / max(l2, 1e-300))
                vals = dict(alpha_l2=l2, alpha_l1=float(np.abs(a).sum()),
                            alpha_linf=float(np.abs(a).max()), beta_l1=stats.l1,
                            beta_l2=stats.l2, J_n=int((np.abs(a) > J_ZERO_TOL).sum()),
                            reg=cv.selected)
                for k, v in vals.items():
                    result.add(mode, 1, n, rep, k, v)
            log.info("norms n=%d rep=%d done", n, rep)
    for mode in config.modes:
        for metric in NORM_METRICS:
            means = {n: float(np.mean(v)) for n, v in result.values(mode, metric).items()}
            _slope_entry(result, mode, metric, 1, means)
    result.summary = {"max_relative_beta_l2_identity_gap": identity_gap}
    return result


def run_rate_study(config):
    """Noise-free test MSE of CV fits versus n for each (target, d) panel."""
    if isinstance(config, str):
        config = resolve_config("rates", config)
    result = StudyResult(config)
    scfg = config.solver_config()
    noise = 0.3 if config.noise_sd is None else config.noise_sd
    for target, d in config.panels:
        psi = _TARGETS[DGPKind(target)]
        for n in config.n_grid:
            for rep in range(config.replicates):
                data = gen_additive(n, d, target, noise,
                                    derive_seed(config.seed, "rates", target, "data", d, n, rep))
                Xt = generator(config.seed, "rates", target, "test", d, n, rep).random(
                    (config.n_test, d))
                ft = psi(Xt)
                model = PCWorkingModel.build(data.X)
                plan = make_folds(n, config.folds,
                                  derive_seed(config.seed, "rates", target, "folds", d, n, rep))
                for mode in config.modes:
                    cv = cv_select(data.X, data.y, mode, LossKind.MSE,
                                   _with_grid(plan, model, config), config=scfg,
                                   full_model=model, threads=config.threads)
                    mse = float(np.mean((cv.refit.predict(Xt) - ft) ** 2))
                    result.add(f"{mode}", d, n, rep, f"test_mse_{target}", mse)
                    result.add(f"{mode}", d, n, rep, f"reg_{target}", cv.selected)
                log.info("rates %s d=%d n=%d rep=%d done", target, d, n, rep)
        for mode in config.modes:
            means = {n: float(np.mean(v))
                     for n, v in result.values(mode, f"test_mse_{target}", d).items()}
            entry = _slope_entry(result, mode, f"test_mse_{target}", d, means)
            entry["target"] = target
    return result


def _with_grid(plan, model, config):
    from .model_selection import default_grid
    return plan.with_grid(default_grid(model, size=config.grid_size))


ATE_TABLE_ROWS = ("bias", "true_se", "bias_over_se", "oracle_coverage",
                  "mean_eic_mean", "mean_abs_eic_mean", "mean_eic_sd")


def _ate_table(estimates, eic_means, eic_sds, truth=0.0):
    est = np.asarray(estimates, float)
    sd = float(est.std(ddof=1)) if est.size > 1 else float("nan")
    bias = float(est.mean() - truth)
    cover = float(np.mean(np.abs(est - truth) <= 1.96 * sd)) if est.size > 1 else float("nan")
    return dict(bias=bias, true_se=sd, bias_over_se=bias / sd if sd > 0 else float("nan"),
                oracle_coverage=cover, mean_eic_mean=float(np.mean(eic_means)),
                mean_abs_eic_mean=float(np.mean(np.abs(eic_means))),
                mean_eic_sd=float(np.mean(eic_sds)))


def run_ate_study(config):
    """Plug-in ATE Monte Carlo with CV-selected and undersmoothed outcome fits.

    With protocol "once", lambda_CV and tau come from an initial sample
    (its own seed stream) and every replicate reuses them; with "per_rep"
    each replicate runs its own CV and tau.
    """
    if isinstance(config, str):
        config = resolve_config("ate", config)
    result = StudyResult(config)
    scfg = config.solver_config()
    n = config.n_grid[0]
    d = 3  # (W1, W2, A)
    pilot = {}
    if config.protocol == "once":
        init = gen_ate(n, derive_seed(config.seed, "ate", "initial"), eps_pos=config.eps_pos)
        model = outcome_model(init)
        plan = make_folds(n, config.folds, derive_seed(config.seed, "ate", "initial", "folds"))
        for mode in config.modes:
            lam, tau = _ate_cv(init, model, mode, plan, config, scfg)
            pilot[mode] = (lam, tau)
        result.summary["initial_sample"] = {m: {"lambda_cv": v[0], "tau": v[1]}
                                            for m, v in pilot.items()}

    for rep in range(config.replicates):
        data = gen_ate(n, derive_seed(config.seed, "ate", "data", rep), eps_pos=config.eps_pos)
        model = outcome_model(data)
        for mode in config.modes:
            if config.protocol == "once":
                lam, tau = pilot[mode]
            else:
                plan = make_folds(n, config.folds, derive_seed(config.seed, "ate", "folds", rep))
                lam, tau = _ate_cv(data, model, mode, plan, config, scfg)
            est = fit_outcome(data, mode, lam, scfg, model)
            mu1, mu0 = counterfactual_means(est, data.W)
            rec = eic(data, mu1, mu0, lam)
            result.add(mode, d, n, rep, "ate_cv", plugin_ate(mu1, mu0))
            result.add(mode, d, n, rep, "eic_mean_cv", rec.mean)
            result.add(mode, d, n, rep, "eic_sd_cv", rec.sd)
            result.add(mode, d, n, rep, "lambda_cv", lam)
            if config.undersmooth:
                us = undersmooth(data, mode, lam, undersmooth_grid(lam), scfg, model, tau=tau)
                m1, m0 = counterfactual_means(us.estimator, data.W)
                result.add(mode, d, n, rep, "ate_us", plugin_ate(m1, m0))
                result.add(mode, d, n, rep, "eic_mean_us", us.eic.mean)
                result.add(mode, d, n, rep, "eic_sd_us", us.eic.sd)
                result.add(mode, d, n, rep, "lambda_us", us.reg_value)
                result.add(mode, d, n, rep, "us_satisfied", float(us.satisfied))
        if rep % 20 == 0:
            log.info("ate rep=%d done", rep)

    tables = {}
    for mode in config.modes:
        row = {}
        for tag in ("cv", "us") if config.undersmooth else ("cv",):
            ests = [v for vs in result.values(mode, f"ate_{tag}").values() for v in vs]
            means = [v for vs in result.values(mode, f"eic_mean_{tag}").values() for v in vs]
            sds = [v for vs in result.values(mode, f"eic_sd_{tag}").values() for v in vs]
            row["no_undersmoothing" if tag == "cv" else "with_undersmoothing"] = _ate_table(
                ests, means, sds)
        tables[mode] = row
    result.summary["tables"] = tables
    return result


def _ate_cv(data, model, mode, plan, config, scfg):
    from .model_selection import default_grid
    cv = cv_select(data.X, data.Y, mode, LossKind.MSE,
                   plan.with_grid(default_grid(model, size=config.grid_size)),
                   config=scfg, full_model=model, threads=config.threads)
    mu1, mu0 = counterfactual_means(cv.refit, data.W)
    rec = eic(data, mu1, mu0, cv.selected)
    return cv.selected, tau_threshold(rec.sd, data.n)


def run_study(config):
    return {"norms": run_norm_study, "rates": run_rate_study,
            "ate": run_ate_study}[config.study](config)
