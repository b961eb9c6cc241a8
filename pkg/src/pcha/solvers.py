"""PC-HAR, PC-HAL and PC-HAGL fitters.

HAR and HAL use the Lagrangian form ``R(alpha) + lam * pen(alpha)`` with
``pen = ||alpha||_2^2`` and ``||alpha||_1`` respectively; HAGL uses the
constrained form ``||beta(alpha)||_1 = C`` and is solved by steepest descent
along multiplicative paths ``(1 + delta h) alpha`` restricted to the tangent
space of the constraint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .losses import LossKind, RiskState, grad_alpha, grad_intercept, path_gradient, risk
from .basis import OracleCapError
from .pc import (basis_columns, basis_matvec, beta_l1, beta_vector, column_groups,
                 group_eigenvectors)

log = logging.getLogger(__name__)


class Mode(str, Enum):
    HAR = "har"
    HAL = "hal"
    HAGL = "hagl"


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 2000
    step_init: float = 0.5
    step_shrink: float = 0.5
    step_floor: float = 1e-12
    grad_tol: float = 1e-8
    risk_tol: float = 1e-10
    inner_max_iter: int = 20000
    metric: str = "newton"
    face_tol: float = 1e-9
    # "hybrid": ADMM warm start on the group-reduced beta, then descent;
    # "descent": constrained steepest descent only
    hagl_method: str = "hybrid"
    admm_max_iter: int = 5000
    admm_tol: float = 1e-6
    # descent after the ADMM stage: "always", or "auto" (only when the face
    # snap failed)
    polish: str = "always"

    def __post_init__(self):
        if not 0 < self.step_shrink < 1:
            raise ValueError("step_shrink must lie in (0, 1)")
        if self.metric not in ("newton", "euclidean"):
            raise ValueError("metric must be 'newton' or 'euclidean'")
        if self.hagl_method not in ("hybrid", "descent"):
            raise ValueError("hagl_method must be 'hybrid' or 'descent'")
        if self.polish not in ("always", "auto"):
            raise ValueError("polish must be 'always' or 'auto'")
        if min(self.grad_tol, self.risk_tol, self.step_init, self.step_floor) <= 0:
            raise ValueError("tolerances and steps must be positive")


@dataclass
class FittedEstimator:
    mode: Mode
    kind: LossKind
    alpha: np.ndarray
    intercept: float
    reg_value: float
    diagnostics: dict = field(default_factory=dict)
    model: object = None
    # HAGL only: vector or zero-argument callable, resolved on first access
    _direction: object = field(default=None, repr=False, compare=False)

    @property
    def constraint_direction(self):
        """Constraint subgradient paired with the final gradient (HAGL); else None."""
        if callable(self._direction):
            self._direction = self._direction()
        return self._direction

    @constraint_direction.setter
    def constraint_direction(self, value):
        self._direction = value

    def predict(self, X_new, scaled=False):
        if self.model is None:
            raise ValueError("estimator is not attached to a working model")
        return self.model.predict(self.alpha, X_new, self.intercept, scaled=scaled)

    def predict_proba(self, X_new, scaled=False):
        from scipy.special import expit
        return expit(self.predict(X_new, scaled=scaled))


def make_state(model, y, kind, weights=None):
    """Risk state on the model's PC design; MSE intercept is the (weighted) mean."""
    kind = LossKind(kind)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != model.n:
        raise ValueError(f"response has {y.shape[0]} rows, model has {model.n}")
    state = RiskState(model.Z, y, 0.0, weights)
    if kind == LossKind.MSE:
        state.intercept = float(state.mean(y))
    return state


def _col_sq(state):
    return (state.Z ** 2).sum(axis=0)


def _wmax(state):
    return 1.0 if state.weights is None else float(state.weights.max())


def _update_intercept(state, kind, alpha, iters=25):
    """Exact-ish 1-D Newton on the unpenalized logistic intercept."""
    if kind != LossKind.LOGISTIC:
        return
    from scipy.special import expit
    for _ in range(iters):
        theta = state.linear(alpha)
        p = expit(-state.y * theta)
        g = state.mean(-state.y * p)
        h = state.mean(p * (1 - p))
        if abs(g) < 1e-13 or h <= 0:
            break
        step = g / max(h, 1e-12)
        base = risk(state, kind, alpha)
        b0 = state.intercept
        t = 1.0
        while t > 1e-10:
            state.intercept = b0 - t * step
            if risk(state, kind, alpha) <= base:
                break
            t *= 0.5
        else:
            state.intercept = b0
            break


def _finish(mode, kind, alpha, state, reg, model, **diag):
    diag.setdefault("final_risk", risk(state, kind, alpha))
    diag["max_abs_alpha"] = float(np.abs(alpha).max()) if alpha.size else 0.0
    return FittedEstimator(Mode(mode), LossKind(kind), alpha, float(state.intercept),
                           float(reg), diag, model)


def fit_har(state, kind, lam, config=SolverConfig(), model=None):
    """Ridge on the orthogonal PC design (diagonal solve for unweighted MSE)."""
    kind = LossKind(kind)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    n = state.n
    d2 = _col_sq(state)
    r = state.Z.shape[1]
    init_risk = risk(state, kind, np.zeros(r))
    if kind == LossKind.MSE:
        yc = state.y - state.intercept
        if state.weights is None:
            alpha = (state.Z.T @ yc) / (d2 + n * lam)
        else:
            Zw = state.Z * state.weights[:, None]
            A = Zw.T @ state.Z + n * lam * np.eye(r)
            alpha = np.linalg.solve(A, Zw.T @ yc)
        return _finish(Mode.HAR, kind, alpha, state, lam, model, iterations=1,
                       initial_risk=init_risk)

    # logistic: diagonal majorization of the Hessian (Z^T C Z / 4n <= cmax diag(d2)/4n)
    alpha = np.zeros(r)
    _update_intercept(state, kind, alpha)
    curv = _wmax(state) * d2 / (4.0 * n) + 2.0 * lam
    it = 0
    for it in range(1, config.inner_max_iter + 1):
        g = grad_alpha(state, kind, alpha) + 2.0 * lam * alpha
        alpha = alpha - g / curv
        _update_intercept(state, kind, alpha, iters=3)
        gn = np.linalg.norm(grad_alpha(state, kind, alpha) + 2.0 * lam * alpha)
        if gn < config.grad_tol and abs(grad_intercept(state, kind, alpha)) < config.grad_tol:
            break
    return _finish(Mode.HAR, kind, alpha, state, lam, model, iterations=it,
                   initial_risk=init_risk)


def soft_threshold(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def fit_hal(state, kind, lam, config=SolverConfig(), model=None):
    """L1-penalized PC coefficients: exact soft-thresholding or FISTA.

    FISTA runs in the diagonal metric diag(d_m^2), which majorizes the
    weighted and logistic Hessians on the orthogonal PC design, so the
    iteration count depends on the weights rather than on the spread of
    the singular values.
    """
    kind = LossKind(kind)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    n = state.n
    d2 = _col_sq(state)
    r = state.Z.shape[1]
    init_risk = risk(state, kind, np.zeros(r))
    if kind == LossKind.MSE and state.weights is None:
        yc = state.y - state.intercept
        alpha = soft_threshold(state.Z.T @ yc, n * lam / 2.0) / d2
        return _finish(Mode.HAL, kind, alpha, state, lam, model, iterations=1,
                       initial_risk=init_risk)

    # diagonal majorizer of the Hessian: Z^T W Z <= w_max diag(d2) since Z^T Z
    # is diagonal; with the logistic intercept, [Z 1]^T W [Z 1] <= 2 w_max
    # blockdiag(diag(d2), n)
    wmax = _wmax(state)
    if kind == LossKind.MSE:
        L = 2.0 * wmax * d2 / n
        Lb = 1.0
    else:
        L = wmax * d2 / (2.0 * n)
        Lb = wmax / 2.0
        _update_intercept(state, kind, np.zeros(r))
    alpha = np.zeros(r)
    mom = alpha.copy()
    b_mom = state.intercept
    t = 1.0
    it = 0
    fit_b = kind == LossKind.LOGISTIC
    for it in range(1, config.inner_max_iter + 1):
        b_prev = state.intercept
        state.intercept = b_mom
        g = grad_alpha(state, kind, mom)
        gb = grad_intercept(state, kind, mom) if fit_b else 0.0
        new = soft_threshold(mom - g / L, lam / L)
        new_b = b_mom - gb / Lb if fit_b else b_prev
        gmap = np.sqrt(np.sum((L * (mom - new)) ** 2) + (Lb * (b_mom - new_b)) ** 2)
        # adaptive restart when the momentum points uphill
        if (mom - new) @ (new - alpha) + (b_mom - new_b) * (new_b - b_prev) > 0:
            t = 1.0
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        coef = (t - 1) / t_next
        mom = new + coef * (new - alpha)
        b_mom = new_b + coef * (new_b - b_prev)
        alpha, t = new, t_next
        state.intercept = new_b
        if gmap < config.grad_tol:
            break
    return _finish(Mode.HAL, kind, alpha, state, lam, model, iterations=it,
                   initial_risk=init_risk)


def hal_objective(state, kind, alpha, lam):
    return risk(state, kind, alpha) + lam * np.abs(alpha).sum()


def har_objective(state, kind, alpha, lam):
    return risk(state, kind, alpha) + lam * float(alpha @ alpha)


def warm_start_hagl(state, model, kind, lam_har, config=SolverConfig()):
    """HAR fit at lam_har; C is the implied ||beta||_1, alpha_HAR the start."""
    har = fit_har(state, kind, lam_har, config)
    if not np.any(har.alpha):
        raise ValueError(
            f"HAR at lambda={lam_har:g} is identically zero; use a smaller lambda")
    C = beta_l1(model, har.alpha)
    return C, har.alpha.copy()


def project_out(D, a):
    aa = float(a @ a)
    if np.sqrt(aa) < 1e-12:
        return D.copy()
    return D - (float(D @ a) / aa) * a


def _hessian_inverse(state, kind, alpha):
    """Callable applying the inverse risk Hessian in alpha (ridge-guarded)."""
    n = state.n
    if kind == LossKind.MSE and state.weights is None:
        diag = 2.0 * _col_sq(state) / n
        return lambda v: (v.T / diag).T
    c = np.ones(n) if state.weights is None else state.weights
    if kind == LossKind.LOGISTIC:
        from scipy.special import expit
        p = expit(state.y * state.linear(alpha))
        c = c * p * (1.0 - p)
    else:
        c = 2.0 * c
    Hm = (state.Z * c[:, None]).T @ state.Z / n
    Hm[np.diag_indices_from(Hm)] += 1e-12 * max(np.trace(Hm) / Hm.shape[0], 1e-300)
    from scipy.linalg import cho_factor, cho_solve
    fac = cho_factor(Hm)
    return lambda v: cho_solve(fac, v)


def _polar_component(G, grad, apply_metric, mult):
    """Closest point to -grad in the polar cone of the constraint's tangent cone.

    The polar cone is {G x : x = (nu, mu), |mu_z| <= mult_z * nu} with
    G = [a1, E_Z^T]; distances use the metric applied by ``apply_metric``
    (a positive-definite linear map). Returns (x, G x). With no pinned zeros
    this is the plain projection of grad onto span(a1), sign unrestricted.
    """
    MG = apply_metric(G)
    P = G.T @ MG
    q = MG.T @ grad
    k = G.shape[1] - 1
    if k == 0:
        nu = -q[0] / P[0, 0] if P[0, 0] > 0 else 0.0
        x = np.array([nu])
        return x, G @ x
    import clarabel
    from scipy import sparse
    scale = max(np.abs(P).max(), 1e-300)
    Ps = sparse.csc_matrix(np.triu(P / scale))
    # rows: mu_z - m_z nu <= 0 and -mu_z - m_z nu <= 0
    idx = np.arange(k)
    A = sparse.csc_matrix(
        (np.concatenate([-mult, -mult, np.ones(k), -np.ones(k)]),
         (np.concatenate([idx, k + idx, idx, k + idx]),
          np.concatenate([np.zeros(2 * k, int), idx + 1, idx + 1]))),
        shape=(2 * k, k + 1))
    b = np.zeros(2 * k)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-12
    settings.tol_feas = 1e-12
    solver = clarabel.DefaultSolver(Ps, q / scale, A, b,
                                    [clarabel.NonnegativeConeT(2 * k)], settings)
    sol = solver.solve()
    x = np.asarray(sol.x)
    return x, G @ x


def _best_breakpoint(state, kind, alpha, v, beta_g, q, mult, C, ts, current, slope):
    """Lowest-risk candidate among steps ts, renormalized onto the constraint,
    that passes an Armijo test; beta along the line is beta_g + t q."""
    l1 = np.abs(beta_g[None, :] + ts[:, None] * q[None, :]) @ mult
    ok = (l1 > 0) & np.isfinite(l1)
    if not ok.any():
        return None
    ts, l1 = ts[ok], l1[ok]
    cands = (alpha[None, :] + ts[:, None] * v[None, :]) * (C / l1)[:, None]
    if kind == LossKind.MSE:
        theta = cands @ state.Z.T + state.intercept
        resid = (state.y[None, :] - theta) ** 2
        risks = resid.mean(axis=1) if state.weights is None else resid @ state.weights / state.n
    else:
        risks = np.array([risk(state, kind, c) for c in cands])
    good = np.isfinite(risks) & (risks < current) & (risks <= current + 1e-4 * ts * slope)
    if not good.any():
        return None
    k = np.flatnonzero(good)[np.argmin(risks[good])]
    return cands[k], float(risks[k])


def _project_weighted_l1(x, mult, C):
    """argmin_z sum m (z - x)^2 subject to sum m |z| <= C."""
    ax = np.abs(x)
    if mult @ ax <= C:
        return x.copy()
    order = np.argsort(-ax)
    axs, ms = ax[order], mult[order]
    tau = (np.cumsum(ms * axs) - C) / np.cumsum(ms)
    k = np.flatnonzero(axs > tau)[-1]
    return np.sign(x) * np.maximum(ax - tau[k], 0.0)


def _risk_prox(state, kind, rho):
    """Solver for argmin_alpha R(alpha) + rho/2 ||alpha - c||^2 (rho fixed per call)."""
    n = state.n
    yc = state.y - state.intercept
    if kind == LossKind.MSE:
        cw = np.ones(n) if state.weights is None else state.weights
        if state.weights is None:
            diag = 2.0 * _col_sq(state) / n
            b = 2.0 * state.Z.T @ yc / n
            return lambda c, rho: (b + rho * c) / (diag + rho)
        Hm = 2.0 * (state.Z * cw[:, None]).T @ state.Z / n
        evals, V = np.linalg.eigh(Hm)
        b = 2.0 * state.Z.T @ (cw * yc) / n
        return lambda c, rho: V @ ((V.T @ (b + rho * c)) / (evals + rho))

    def prox(c, rho, alpha0=None):
        a = c.copy() if alpha0 is None else alpha0.copy()
        from scipy.special import expit
        cw = np.ones(n) if state.weights is None else state.weights
        for _ in range(20):
            g = grad_alpha(state, kind, a) + rho * (a - c)
            if np.linalg.norm(g) < 1e-12:
                break
            p = expit(state.y * state.linear(a))
            Hm = (state.Z * (cw * p * (1 - p))[:, None]).T @ state.Z / n
            Hm[np.diag_indices_from(Hm)] += rho
            step = np.linalg.solve(Hm, g)
            f0 = risk(state, kind, a) + 0.5 * rho * np.sum((a - c) ** 2)
            t = 1.0
            while t > 1e-8:
                cand = a - t * step
                if risk(state, kind, cand) + 0.5 * rho * np.sum((cand - c) ** 2) <= f0:
                    break
                t *= 0.5
            a = a - t * step
            _update_intercept(state, kind, a, iters=2)
        return a
    return prox


def _admm_hagl(state, model, kind, C, alpha, config, warm=None):
    """ADMM on z = E_g alpha with z in the weighted L1 ball of radius C.

    E_g^T diag(m) E_g = I makes the alpha-update a proximal step of the risk
    alone. Once the residuals fall below the tolerance, the sign pattern of z
    is used to snap onto the exact face; while that fails the tolerance is
    tightened tenfold, up to three attempts. Returns alpha on ||beta(alpha)||_1 = C, the
    iteration count and whether the snap succeeded.
    """
    _, _, mult = column_groups(model)
    Eg = group_eigenvectors(model)
    # the iterations only locate the face, so single precision is enough for
    # the two products per step (memory bound); snap and rescale use Eg
    Ef = Eg.astype(np.float32)
    EfT = Ef.T
    prox = _risk_prox(state, kind, None)
    z = Eg @ alpha
    z *= C / max(mult @ np.abs(z), 1e-300)
    u = np.zeros_like(z)
    rho = float(np.median(2.0 * _col_sq(state) / state.n))
    if warm and warm.get("u") is not None and warm["u"].shape == u.shape:
        u, rho = warm["u"].copy(), warm["rho"]
    relax = 1.6
    tol = config.admm_tol
    snapped = None
    misses = 0
    k = 0
    for k in range(1, config.admm_max_iter + 1):
        c = (EfT @ (mult * (z - u)).astype(np.float32)).astype(float)
        alpha = prox(c, rho)
        Ea = (Ef @ alpha.astype(np.float32)).astype(float)
        Er = relax * Ea + (1.0 - relax) * z
        z_new = _project_weighted_l1(Er + u, mult, C)
        dual = rho * np.sqrt(mult @ (z_new - z) ** 2)
        z = z_new
        u += Er - z
        primal = np.sqrt(mult @ (Ea - z) ** 2)
        if primal < tol * C and dual < tol * max(rho * np.sqrt(mult @ u ** 2), 1.0):
            snapped = _snap_to_face(state, kind, Eg, mult, C, z)
            if snapped is not None or kind != LossKind.MSE:
                alpha = snapped if snapped is not None else alpha
                break
            # a snap that fails at three tolerances rarely succeeds later;
            # the descent polish takes over from the ADMM iterate
            misses += 1
            if misses == 3:
                break
            tol *= 0.1
        # residual balancing (u is scaled by 1/rho)
        if k % 20 == 0:
            if primal > 10 * dual:
                rho *= 2.0
                u /= 2.0
            elif dual > 10 * primal:
                rho /= 2.0
                u *= 2.0
    if warm is not None:
        warm["u"], warm["rho"] = u, rho
    l1 = mult @ np.abs(Eg @ alpha)
    return alpha * (C / l1), k, snapped is not None


def _snap_to_face(state, kind, Eg, mult, C, z):
    """Quadratic-risk minimizer on the face given by the sign pattern of z.

    Solves min R(alpha) s.t. E_Z alpha = 0 on zeros of z and
    sum_P m s_P (E_P alpha) = C, by a null-space reduction. Returns None
    if the loss is not quadratic or the solution leaves the face's orthant.
    """
    if kind != LossKind.MSE:
        return None
    sg = np.sign(z)
    zero = sg == 0
    r = Eg.shape[1]
    if zero.any():
        Ez = Eg[zero]
        # Vt must be r x r; the left factor is never used
        _, sv, Vt = np.linalg.svd(Ez, full_matrices=Ez.shape[0] < r)
        tol = max(Eg.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
        rank = int((sv > tol).sum())
        N = Vt[rank:].T
    else:
        N = np.eye(r)
    if N.shape[1] == 0:
        return None
    a1 = Eg.T @ (mult * sg)
    f = N.T @ a1
    if not np.linalg.norm(f) > 0:
        return None
    n = state.n
    cw = np.ones(n) if state.weights is None else state.weights
    sq = np.sqrt(cw / n)
    A = (state.Z @ N) * sq[:, None]
    b = (state.y - state.intercept) * sq
    k = N.shape[1]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = A.T @ A
    K[:k, k] = K[k, :k] = f
    rhs = np.concatenate([A.T @ b, [C]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    alpha = N @ sol[:k]
    beta = Eg @ alpha
    scale = np.abs(beta).max()
    if not scale > 0 or np.any(sg[~zero] * beta[~zero] < -1e-9 * scale):
        return None
    l1 = mult @ np.abs(beta)
    return alpha * (C / l1)


def _face_geometry(model, beta_g, group, reps, face_tol):
    """Pinned zero groups, their signs, and G = [a1, E_Z^T] at group betas."""
    peak = np.abs(beta_g).max()
    zero = np.flatnonzero(np.abs(beta_g) <= face_tol * peak)
    s_g = np.sign(beta_g)
    s_g[zero] = 0.0
    a1 = (model.U.T @ basis_matvec(model, s_g[group])) / model.D
    if zero.size:
        cols = basis_columns(model, reps[zero]).astype(np.float64)
        EZt = (model.U.T @ cols) / model.D[:, None]
        G = np.column_stack([a1, EZt])
    else:
        G = a1[:, None]
    return zero, s_g, G, a1


def fit_hagl(state, model, kind, C, alpha_init, config=SolverConfig(), warm=None):
    """Minimize the risk over ||beta(alpha)||_1 = C by constrained steepest descent.

    Each iteration moves along alpha + t v, a multiplicative path
    alpha * (1 + t h) with h = v / alpha, where v is the steepest descent
    direction restricted to directions that keep ||beta||_1 = C to first
    order. Away from kinks that restriction is orthogonality to the
    constraint gradient a1 (so D* = D - proj(D | a)); where some beta_j = 0
    it becomes the tangent cone of the L1 ball, obtained by removing the
    polar-cone component of the gradient. ``config.metric`` selects plain
    Euclidean steepest descent in h or the risk-Hessian metric. Candidates
    are rescaled onto the constraint (exact, beta is linear in alpha) and
    accepted on Armijo decrease.

    With ``config.hagl_method == "hybrid"`` an ADMM stage on the
    group-reduced beta first moves alpha_init close to the optimum and snaps
    it onto a face; the descent then finishes and certifies. ``warm`` is an
    optional dict carrying ADMM state between related fits (a lambda grid);
    it is updated in place and also stores the returned alpha.
    """
    kind = LossKind(kind)
    if not C > 0:
        raise ValueError("C must be positive")
    group, reps, mult = column_groups(model)

    def norm_beta(a):
        bg = beta_vector(model, a)[reps]
        return float(mult @ np.abs(bg)), bg

    alpha = np.asarray(alpha_init, dtype=float).copy()
    l1, _ = norm_beta(alpha)
    if not l1 > 0:
        raise ValueError("alpha_init maps to beta = 0; cannot rescale onto the constraint")
    if abs(l1 - C) > 0.05 * C:
        log.debug("rescaling alpha_init from ||beta||_1=%g onto C=%g", l1, C)
    alpha *= C / l1
    _update_intercept(state, kind, alpha)
    current = risk(state, kind, alpha)
    init_risk = current
    admm_iters = 0
    snapped = False
    if config.hagl_method == "hybrid":
        try:
            cand, admm_iters, snapped = _admm_hagl(state, model, kind, C, alpha.copy(),
                                                   config, warm)
        except OracleCapError:
            log.debug("group-reduced basis too large for the ADMM warm start")
        else:
            b0 = state.intercept
            _update_intercept(state, kind, cand)
            rc = risk(state, kind, cand)
            if np.isfinite(rc) and rc < current:
                alpha, current = cand, rc
            else:
                state.intercept = b0
                snapped = False
    history = [current]
    converged = stalled = False
    stat = np.inf
    subgrad = None
    n_zero = 0
    it = 0
    budget = 0 if (snapped and config.polish == "auto") else config.max_iter
    converged = budget == 0 and snapped
    for it in range(1, budget + 1):
        l1, beta_g = norm_beta(alpha)
        if abs(l1 - C) > 1e-12 * C:
            alpha *= C / l1
            beta_g *= C / l1
            current = risk(state, kind, alpha)
        zero, s_g, G, a1 = _face_geometry(model, beta_g, group, reps, config.face_tol)
        n_zero = zero.size
        grad = grad_alpha(state, kind, alpha)
        if config.metric == "newton":
            apply_metric = _hessian_inverse(state, kind, alpha)
            x, y = _polar_component(G, grad, apply_metric, mult[zero])
            pg = grad + y
            v = -apply_metric(pg)
            stat = float(np.sqrt(max(pg @ v * -1.0, 0.0)))
            done = stat ** 2 < config.grad_tol ** 2 or float(np.linalg.norm(pg)) < config.grad_tol
            peak = 1.0
        else:
            Gh = G * alpha[:, None]
            D = alpha * grad
            x, y = _polar_component(Gh, D, lambda m: m, mult[zero])
            Dstar = D + y
            v = -alpha * Dstar
            pg = grad + G @ x
            stat = float(Dstar @ Dstar)
            done = stat < config.grad_tol
            peak = max(np.abs(Dstar).max(), 1e-300)
        if done:
            converged = True
            nu = x[0]
            subgrad = (G @ np.concatenate([[1.0], x[1:] / nu])) if nu != 0 else a1
            break

        q = beta_vector(model, v)[reps]
        heading_in = (s_g * q) < 0
        cross = np.full(beta_g.size, np.inf)
        cross[heading_in] = -beta_g[heading_in] / q[heading_in]
        cross_at = float(cross.min()) if cross.size else np.inf

        slope = float(grad @ v)
        t = config.step_init / peak if config.metric == "euclidean" else 1.0
        floor = config.step_floor / peak
        # full step first (may pass sign crossings), then stop at the first
        # crossing, then plain backtracking
        ts = [t] + ([cross_at] if floor <= cross_at < t else [])
        accepted = None
        for tt in ts:
            accepted = _best_breakpoint(state, kind, alpha, v, beta_g, q, mult, C,
                                        np.array([tt]), current, slope)
            if accepted is not None:
                break
        tt = min(t, cross_at)
        while accepted is None:
            tt *= config.step_shrink
            if tt < floor:
                break
            accepted = _best_breakpoint(state, kind, alpha, v, beta_g, q, mult, C,
                                        np.array([tt]), current, slope)
        if accepted is None:
            stalled = converged = True
            log.info("HAGL line search exhausted at iteration %d; treating as converged", it)
            break
        alpha, new = accepted
        if kind == LossKind.LOGISTIC:
            _update_intercept(state, kind, alpha, iters=3)
            new = risk(state, kind, alpha)
        drop = current - new
        current = new
        history.append(current)
        if drop < config.risk_tol * max(1.0, abs(current)) and not np.isfinite(cross_at):
            converged = True
            break

    final_l1, beta_g = norm_beta(alpha)
    if subgrad is None:
        # the polar-cone QP can be large on faces with many zero groups and CV
        # never needs the direction, so it is computed on first access
        subgrad = _deferred_direction(state, kind, model, alpha.copy(), beta_g, group, reps,
                                      mult, config)
        n_zero = int((np.abs(beta_g) <= config.face_tol * np.abs(beta_g).max()).sum())
    diag = dict(iterations=it, final_risk=risk(state, kind, alpha), initial_risk=init_risk,
                constraint_residual=abs(final_l1 - C) / max(C, 1e-12),
                score_residual=stat if np.isfinite(stat) else None,
                converged=converged, stalled=stalled, zero_groups=int(n_zero),
                admm_iterations=admm_iters, face_snapped=bool(snapped),
                risk_history=history)
    if warm is not None:
        warm["alpha"] = alpha.copy()
    est = _finish(Mode.HAGL, kind, alpha, state, C, model, **diag)
    est.constraint_direction = subgrad
    return est


def _deferred_direction(state, kind, model, alpha, beta_g, group, reps, mult, config):
    snap = RiskState(state.Z, state.y, state.intercept, state.weights)

    def direction():
        zero, _, G, a1 = _face_geometry(model, beta_g, group, reps, config.face_tol)
        grad = grad_alpha(snap, kind, alpha)
        metric = (_hessian_inverse(snap, kind, alpha) if config.metric == "newton"
                  else (lambda m: (m.T * alpha ** 2).T))
        x, _ = _polar_component(G, grad, metric, mult[zero])
        return G @ np.concatenate([[1.0], x[1:] / x[0]]) if x[0] != 0 else a1
    return direction


def fit_mode(model, y, mode, kind, reg, weights=None, config=SolverConfig(), warm=None):
    """Fit one estimator on a working model.

    ``reg`` is lambda for HAR/HAL and the warm-start HAR lambda for HAGL
    (the two-step procedure whose C is ||beta(alpha_HAR(lambda))||_1).
    For HAGL, ``warm`` (a dict reused across a grid of related fits) replaces
    the HAR starting point by the previous solution rescaled onto the new C;
    C itself always comes from HAR.
    """
    mode = Mode(mode)
    state = make_state(model, y, kind, weights)
    if mode == Mode.HAR:
        return fit_har(state, kind, reg, config, model=model)
    if mode == Mode.HAL:
        return fit_hal(state, kind, reg, config, model=model)
    C, alpha0 = warm_start_hagl(state, model, kind, reg, config)
    if warm is not None and warm.get("alpha") is not None and warm["alpha"].shape == alpha0.shape:
        alpha0 = warm["alpha"].copy()
    est = fit_hagl(state, model, kind, C, alpha0, config, warm=warm)
    est.diagnostics["lambda_har"] = float(reg)
    return est
