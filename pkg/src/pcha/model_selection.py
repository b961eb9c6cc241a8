"""V-fold cross-validation over regularization grids.

Every fold rebuilds the working model (unit-cube scaling, basis, Gram,
spectrum) from its training rows only; validation rows enter solely through
``predict``. For HAGL the grid indexes the HAR lambda of the two-step
procedure.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .losses import LossKind, recode_binary
from .pc import DEFAULT_RANK_TOL, PCWorkingModel
from .rng import generator
from .solvers import FittedEstimator, Mode, SolverConfig, fit_mode

log = logging.getLogger(__name__)

DEFAULT_GRID_SIZE = 20
DEFAULT_GRID_SPAN = (1e-6, 1e2)


@dataclass(frozen=True)
class CVPlan:
    V: int
    folds: np.ndarray
    seed: int
    grid: np.ndarray | None = None

    @property
    def n(self):
        return self.folds.shape[0]

    def split(self, v):
        return np.flatnonzero(self.folds != v), np.flatnonzero(self.folds == v)

    def with_grid(self, grid):
        return CVPlan(self.V, self.folds, self.seed, np.asarray(grid, float))


@dataclass
class CVResult:
    grid: np.ndarray
    mean_risk: np.ndarray
    fold_risk: np.ndarray
    selected: float
    refit: FittedEstimator
    fold_models: list = field(default_factory=list, repr=False)


def make_folds(n, V, seed, grid=None):
    """Seeded shuffle of 0..n-1 followed by round-robin fold assignment."""
    n, V = int(n), int(V)
    if V < 2:
        raise ValueError("need at least 2 folds")
    if V > n:
        raise ValueError(f"cannot make {V} folds from {n} rows")
    perm = generator(seed, "folds").permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % V
    return CVPlan(V, folds, int(seed), None if grid is None else np.asarray(grid, float))


def default_grid(model, size=DEFAULT_GRID_SIZE, span=DEFAULT_GRID_SPAN):
    """Log-spaced lambdas over span * D_max^2 / n, in decreasing order."""
    scale = model.D[0] ** 2 / model.n
    return np.geomspace(span[1] * scale, span[0] * scale, size)


def validation_risk(kind, y, theta):
    kind = LossKind(kind)
    if kind == LossKind.MSE:
        return float(np.mean((y - theta) ** 2))
    return float(np.mean(np.logaddexp(0.0, -y * theta)))


def _fold_fits(X, y, kind, mode, grid, train, valid, config, max_degree, rank_tol):
    model = PCWorkingModel.build(X[train], max_degree=max_degree, rank_tol=rank_tol)
    out = np.full(grid.size, np.nan)
    warm = {} if Mode(mode) == Mode.HAGL else None
    # strongest regularization first so warm starts move along the path
    for k in np.argsort(-grid, kind="stable"):
        try:
            est = fit_mode(model, y[train], mode, kind, grid[k], config=config, warm=warm)
            out[k] = validation_risk(kind, y[valid], est.predict(X[valid]))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.info("fold fit failed at reg=%g: %s", grid[k], exc)
    return out, model


def cv_select(X, y, mode, kind, plan, config=SolverConfig(), max_degree=None,
              rank_tol=DEFAULT_RANK_TOL, full_model=None, threads=1, keep_models=False):
    """Select the regularization value minimizing mean validation risk, then refit.

    Ties (within 1e-12 relative) go to the stronger regularization (larger
    lambda). A grid point whose fit fails on any fold is invalid.
    """
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    kind = LossKind(kind)
    y = np.asarray(y, float)
    if kind == LossKind.LOGISTIC:
        y = recode_binary(y)
    if plan.n != X.shape[0]:
        raise ValueError("fold plan and data disagree on n")
    if full_model is None:
        full_model = PCWorkingModel.build(X, max_degree=max_degree, rank_tol=rank_tol)
    grid = default_grid(full_model) if plan.grid is None else np.asarray(plan.grid, float)
    if grid.size == 0:
        raise ValueError("empty regularization grid")

    def job(v):
        train, valid = plan.split(v)
        return _fold_fits(X, y, kind, mode, grid, train, valid, config, max_degree, rank_tol)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(plan.V)))
    else:
        results = [job(v) for v in range(plan.V)]
    fold_risk = np.stack([r for r, _ in results])
    mean_risk = fold_risk.mean(axis=0)  # nan if any fold failed
    ok = np.isfinite(mean_risk)
    if not ok.any():
        raise RuntimeError("every grid point failed in cross-validation")
    best = np.nanmin(mean_risk)
    tied = ok & (mean_risk <= best + 1e-12 * max(abs(best), 1e-300))
    selected = float(grid[tied].max())
    refit = fit_mode(full_model, y, mode, kind, selected, config=config)
    return CVResult(grid=grid, mean_risk=mean_risk, fold_risk=fold_risk,
                    selected=selected, refit=refit,
                    fold_models=[m for _, m in results] if keep_models else [])
