"""Plug-in average treatment effect with PC-HA outcome regressions.

The outcome regression E[Y | A, W] is a single MSE fit on the covariate
(W, A), with A as the last coordinate. Propensities are known. The
efficient influence curve at the fit measures plug-in bias through its
empirical mean, and undersmoothing lowers lambda until that mean falls
inside +-tau with tau = sd(D) / (sqrt(n) log n).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .losses import LossKind
from .pc import DEFAULT_RANK_TOL, PCWorkingModel
from .rng import generator
from .solvers import Mode, SolverConfig, fit_mode

log = logging.getLogger(__name__)

UNDERSMOOTH_STEPS = 40
UNDERSMOOTH_RATIO = 0.85


@dataclass(frozen=True)
class CausalDataset:
    W: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    pi1: np.ndarray
    eps_pos: float = 1e-3

    def __post_init__(self):
        W = np.asarray(self.W, float)
        if W.ndim == 1:
            W = W[:, None]
        A = np.asarray(self.A, float)
        Y = np.asarray(self.Y, float)
        pi1 = np.asarray(self.pi1, float)
        n = W.shape[0]
        if not (A.shape == Y.shape == pi1.shape == (n,)):
            raise ValueError("W, A, Y and pi1 must have matching row counts")
        if not np.isin(A, (0.0, 1.0)).all():
            raise ValueError("treatment must be coded 0/1")
        if A.min() == A.max():
            raise ValueError("both treatment arms must be nonempty")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "pi1", pi1)

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def X(self):
        """Outcome-regression covariate (W, A)."""
        return np.column_stack([self.W, self.A])

    def subset(self, idx):
        return CausalDataset(self.W[idx], self.A[idx], self.Y[idx], self.pi1[idx], self.eps_pos)


@dataclass(frozen=True)
class EICRecord:
    values: np.ndarray
    mean: float
    sd: float
    reg_value: float = float("nan")


@dataclass
class UndersmoothResult:
    reg_value: float
    estimator: object
    eic: EICRecord
    tau: float
    satisfied: bool
    path: list  # (lambda, P_n D) for every fit evaluated


def outcome_model(data, max_degree=None, rank_tol=DEFAULT_RANK_TOL):
    return PCWorkingModel.build(data.X, max_degree=max_degree, rank_tol=rank_tol)


def fit_outcome(data, mode, reg, config=SolverConfig(), model=None, warm=None):
    """One PC-HA MSE fit of Y on (W, A)."""
    if model is None:
        model = outcome_model(data)
    return fit_mode(model, data.Y, mode, LossKind.MSE, reg, config=config, warm=warm)


def counterfactual_means(est, W):
    """(mu1(W), mu0(W)) by predicting at A = 1 and A = 0."""
    W = np.asarray(W, float)
    if W.ndim == 1:
        W = W[:, None]
    n = W.shape[0]
    both = np.vstack([np.column_stack([W, np.ones(n)]), np.column_stack([W, np.zeros(n)])])
    pred = est.predict(both)
    return pred[:n], pred[n:]


def plugin_ate(mu1, mu0, weights=None):
    diff = np.asarray(mu1, float) - np.asarray(mu0, float)
    if weights is None:
        return float(diff.mean())
    return float(weights @ diff / weights.sum())


def eic(data, mu1, mu0, reg_value=float("nan")):
    """D = phi_1 - phi_0 at the fitted outcome means and known propensity."""
    pi1 = data.pi1
    pi0 = 1.0 - pi1
    lo = data.eps_pos
    if pi1.min() < lo or pi0.min() < lo:
        raise ValueError(f"positivity violated: a propensity falls below {lo}")
    mu1 = np.asarray(mu1, float)
    mu0 = np.asarray(mu0, float)
    A, Y = data.A, data.Y
    phi1 = A / pi1 * (Y - mu1) + (mu1 - mu1.mean())
    phi0 = (1 - A) / pi0 * (Y - mu0) + (mu0 - mu0.mean())
    D = phi1 - phi0
    sd = float(D.std(ddof=1)) if D.size > 1 else 0.0
    return EICRecord(values=D, mean=float(D.mean()), sd=sd, reg_value=float(reg_value))


def tau_threshold(sd, n):
    return float(sd / (np.sqrt(n) * np.log(n)))


def undersmooth_grid(lam_cv, steps=UNDERSMOOTH_STEPS, ratio=UNDERSMOOTH_RATIO):
    """lam_cv, lam_cv * ratio, ..., strictly decreasing, ``steps`` values."""
    return lam_cv * ratio ** np.arange(steps)


def undersmooth(data, mode, lam_cv, grid_down=None, config=SolverConfig(), model=None,
                tau=None):
    """Smallest lambda on the downward grid with |P_n D| <= tau.

    tau defaults to the EIC sd at the lam_cv fit (pass it to reuse a value
    computed once on another sample). The grid is scanned from its smallest
    value upward and the scan stops at the first fit inside the band, which
    selects the same lambda as a full downward walk. If no grid point
    satisfies the band, the lambda minimizing |P_n D| is returned and
    ``satisfied`` is False.
    """
    if model is None:
        model = outcome_model(data)
    grid = undersmooth_grid(lam_cv) if grid_down is None else np.asarray(grid_down, float)
    if grid.size == 0 or np.any(np.diff(grid) >= 0) or grid[0] > lam_cv * (1 + 1e-12):
        raise ValueError("grid_down must be strictly decreasing and start at or below lam_cv")
    warm = {}
    cache = {}

    def evaluate(k):
        if k not in cache:
            est = fit_outcome(data, mode, grid[k], config, model, warm=warm)
            mu1, mu0 = counterfactual_means(est, data.W)
            cache[k] = (est, eic(data, mu1, mu0, grid[k]))
        return cache[k]

    if tau is None:
        if grid[0] == lam_cv:
            rec = evaluate(0)[1]
        else:
            est = fit_outcome(data, mode, lam_cv, config, model)
            rec = eic(data, *counterfactual_means(est, data.W), lam_cv)
        tau = tau_threshold(rec.sd, data.n)
        warm.clear()

    chosen = None
    for k in range(grid.size - 1, -1, -1):
        est, rec = evaluate(k)
        if abs(rec.mean) <= tau:
            chosen = k
            break
    satisfied = chosen is not None
    if not satisfied:
        chosen = min(cache, key=lambda j: (abs(cache[j][1].mean), j))
        log.warning("no lambda on the undersmoothing grid reaches |P_n D| <= tau=%g", tau)
    est, rec = cache[chosen]
    path = [(float(grid[k]), cache[k][1].mean) for k in sorted(cache)]
    return UndersmoothResult(float(grid[chosen]), est, rec, float(tau), satisfied, path)


def _percentile_interval(stats, level):
    """1-based order statistics floor(B a/2) and ceil(B (1 - a/2)), a = 1 - level."""
    s = np.sort(np.asarray(stats, float))
    B = s.size
    a = 1.0 - level
    lo = max(int(np.floor(B * a / 2.0 + 1e-9)), 1)
    hi = min(int(np.ceil(B * (1.0 - a / 2.0) - 1e-9)), B)
    return float(s[lo - 1]), float(s[hi - 1])


def bootstrap_ci(model, y, mode, reg, B=200, seed=0, level=0.95, target="ate",
                 x0=None, data=None, kind=LossKind.MSE, config=SolverConfig()):
    """Percentile interval from refits on resampled rows with the model fixed.

    Resampling enters as multiplicity weights on the fixed PC design; the
    basis, Gram and spectrum are never rebuilt. target="ate" needs ``data``
    (the CausalDataset whose (W, A) built ``model``); target="point" needs x0.
    Replicates that resample a single treatment arm are skipped; more than
    10% skipped is an error. Returns (lo, hi, replicate statistics).
    """
    if B < 50:
        raise ValueError("need B >= 50 bootstrap replicates")
    if target not in ("ate", "point"):
        raise ValueError("target must be 'ate' or 'point'")
    if target == "ate" and data is None:
        raise ValueError("ATE target needs the causal dataset")
    if target == "point" and x0 is None:
        raise ValueError("point target needs x0")
    n = model.n
    rng = generator(seed, "bootstrap")
    stats = []
    skipped = 0
    warm = {} if Mode(mode) == Mode.HAGL else None
    for b in range(B):
        idx = rng.integers(0, n, size=n)
        c = np.bincount(idx, minlength=n).astype(float)
        if target == "ate":
            arms = data.A[c > 0]
            if arms.min() == arms.max():
                skipped += 1
                log.info("bootstrap replicate %d resampled a single arm; skipped", b)
                continue
        est = fit_mode(model, y, mode, kind, reg, weights=c, config=config, warm=warm)
        if target == "ate":
            mu1, mu0 = counterfactual_means(est, data.W)
            stats.append(plugin_ate(mu1, mu0, weights=c))
        else:
            stats.append(float(est.predict(np.atleast_2d(x0))[0]))
    if skipped > 0.1 * B:
        raise RuntimeError(f"{skipped} of {B} bootstrap replicates were degenerate")
    lo, hi = _percentile_interval(stats, level)
    return lo, hi, np.asarray(stats)
