"""Principal-component working model on top of the implicit indicator basis.

With K = H H^T = U diag(D^2) U^T, the PC design is Z = U diag(D) and the
map from PC coefficients to spline coefficients is
``beta(alpha) = H^T U diag(D)^-1 alpha``. Only n-dimensional objects are
stored; spline-coefficient statistics are streamed one subset block at a
time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisSpec,
    ScalingMap,
    _indicator_block,
    _knot_chunks,
    build_kernel_matrix,
    design_matrix,
    kernel_cross,
    scale_to_unit_cube,
)

DEFAULT_RANK_TOL = 1e-10
# |beta_j| at or below this fraction of ||w||_1 counts as an exact zero
SIGN_ZERO_TOL = 1e-12


@dataclass(frozen=True)
class SpectralFactors:
    U: np.ndarray
    D: np.ndarray

    @property
    def rank(self):
        return self.D.shape[0]


def spectral_decompose(K, rank_tol=DEFAULT_RANK_TOL):
    """Eigendecompose a PSD Gram matrix, dropping directions below rank_tol."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("kernel matrix must be square")
    scale = max(np.abs(K).max(), 1.0)
    if np.abs(K - K.T).max() > 1e-9 * scale:
        raise ValueError("kernel matrix is not symmetric")
    evals, evecs = np.linalg.eigh(0.5 * (K + K.T))
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = evals[0] if evals.size else 0.0
    keep = evals > rank_tol * top if top > 0 else np.zeros_like(evals, bool)
    evals, evecs = evals[keep], evecs[:, keep]
    # sign convention: largest-magnitude entry of each column is positive
    pivot = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivot, np.arange(evecs.shape[1])])
    signs[signs == 0] = 1.0
    return SpectralFactors(U=evecs * signs, D=np.sqrt(evals))


@dataclass(frozen=True)
class BetaStats:
    l1: float
    l2: float
    g: np.ndarray


def _sign(beta, scale):
    out = np.sign(beta)
    out[np.abs(beta) <= SIGN_ZERO_TOL * scale] = 0.0
    return out


@dataclass(frozen=True)
class PCWorkingModel:
    """Outcome-blind PC working model built from training covariates."""

    spec: BasisSpec
    scaling: ScalingMap
    factors: SpectralFactors

    @classmethod
    def build(cls, X_raw, max_degree=None, rank_tol=DEFAULT_RANK_TOL,
              oracle_cap=None, scaling=None):
        if scaling is None:
            X, scaling = scale_to_unit_cube(X_raw)
        else:
            X = scaling.apply(X_raw)
        kw = {} if oracle_cap is None else {"oracle_cap": oracle_cap}
        spec = BasisSpec(X, max_degree=max_degree, **kw)
        K = build_kernel_matrix(spec)
        return cls(spec=spec, scaling=scaling,
                   factors=spectral_decompose(K, rank_tol))

    @property
    def X_train(self):
        return self.spec.knots

    @property
    def n(self):
        return self.spec.n

    @property
    def rank(self):
        return self.factors.rank

    @property
    def U(self):
        return self.factors.U

    @property
    def D(self):
        return self.factors.D

    @property
    def Z(self):
        return self.factors.U * self.factors.D

    def dual_weights(self, alpha):
        """w with beta(alpha) = H^T w and theta(x) = k(x)^T w."""
        return self.U @ (np.asarray(alpha, float) / self.D)

    def predict(self, alpha, X_new, intercept=0.0, scaled=False):
        """theta(x) = k(x, x^n)^T U diag(D)^-1 alpha + intercept."""
        X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
        if not scaled:
            X_new = self.scaling.apply(X_new)
        Kx = kernel_cross(self.spec, X_new).astype(np.float64)
        return Kx @ self.dual_weights(alpha) + intercept

    def fitted(self, alpha, intercept=0.0):
        return self.Z @ np.asarray(alpha, float) + intercept

    def beta_stats(self, alpha):
        return beta_stats_streaming(self, alpha)


def beta_of_alpha_oracle(model, alpha):
    """Full beta(alpha) through the materialized design (oracle scale only)."""
    H = design_matrix(model.spec, model.X_train).astype(np.float64)
    E = H.T @ (model.U / model.D)
    return E @ np.asarray(alpha, float)


def eigenvector_matrix_oracle(model):
    """E = H^T U diag(D)^-1, N x r with orthonormal columns (oracle scale)."""
    H = design_matrix(model.spec, model.X_train).astype(np.float64)
    return H.T @ (model.U / model.D)


def _singleton_pass(v, w):
    """beta over the knots of one coordinate, plus a sign-sum callback.

    beta_l = sum_i w_i 1{v_i >= v_l} is a suffix sum in sorted order.
    """
    order = np.argsort(v, kind="stable")
    vs = v[order]
    suffix = np.concatenate([np.cumsum(w[order][::-1])[::-1], [0.0]])
    pos = np.searchsorted(vs, v, side="left")
    beta = suffix[pos]

    def sign_sum(sgn):
        # g_i = sum_l sgn_l 1{v_l <= v_i}: prefix sums in sorted knot order
        prefix = np.concatenate([[0.0], np.cumsum(sgn[order])])
        return prefix[np.searchsorted(vs, v, side="right")]

    return beta, sign_sum


def beta_stats_streaming(model, alpha):
    """l1 and l2 norms of beta(alpha) and g_i = sum_j sign(beta_j) phi_j(x_i).

    One sweep over the implicit basis, one knot block at a time. Entries with
    |beta_j| <= SIGN_ZERO_TOL * ||w||_1 (an upper bound on every |beta_j|)
    get sign 0.
    """
    alpha = np.asarray(alpha, float)
    X = model.X_train
    n = model.n
    w = model.dual_weights(alpha)
    scale = np.abs(w).sum()

    l1 = 0.0
    l2sq = 0.0
    g = np.zeros(n)
    for s in model.spec.subsets:
        if len(s) == 1:
            beta, sign_sum = _singleton_pass(X[:, s[0]], w)
            l1 += np.abs(beta).sum()
            l2sq += beta @ beta
            g += sign_sum(_sign(beta, scale))
            continue
        for sl in _knot_chunks(n, n):
            P = _indicator_block(X, X[sl], s).astype(np.float64)
            beta = w @ P
            l1 += np.abs(beta).sum()
            l2sq += beta @ beta
            g += P @ _sign(beta, scale)
    return BetaStats(l1=float(l1), l2=float(np.sqrt(l2sq)), g=g)


def beta_l1(model, alpha):
    """Single-sweep ||beta(alpha)||_1 (no sign vector)."""
    alpha = np.asarray(alpha, float)
    X = model.X_train
    w = model.dual_weights(alpha)
    total = 0.0
    for s in model.spec.subsets:
        if len(s) == 1:
            beta, _ = _singleton_pass(X[:, s[0]], w)
            total += np.abs(beta).sum()
        else:
            for sl in _knot_chunks(model.n, model.n):
                P = _indicator_block(X, X[sl], s).astype(np.float64)
                total += np.abs(w @ P).sum()
    return float(total)


def constraint_gradient(model, stats):
    """a1(m) = sum_j E(j, m) sign(beta_j) = (diag(D)^-1 U^T g)(m)."""
    return (model.U.T @ stats.g) / model.D


def beta_vector(model, alpha):
    """Full beta(alpha) in knot-major order, streamed (stores N floats, never E)."""
    X = model.X_train
    n = model.n
    subs = model.spec.subsets
    w = model.dual_weights(alpha)
    out = np.empty((n, len(subs)))
    for k, s in enumerate(subs):
        if len(s) == 1:
            out[:, k], _ = _singleton_pass(X[:, s[0]], w)
            continue
        for sl in _knot_chunks(n, n):
            out[sl, k] = w @ _indicator_block(X, X[sl], s).astype(np.float64)
    return out.reshape(-1)


def basis_matvec(model, v):
    """H v: sum_j v_j phi_j(x_i) at the training rows, for an N-vector v."""
    X = model.X_train
    n = model.n
    subs = model.spec.subsets
    v = np.asarray(v, float).reshape(n, len(subs))
    out = np.zeros(n)
    for k, s in enumerate(subs):
        if len(s) == 1:
            order = np.argsort(X[:, s[0]], kind="stable")
            vs = X[order, s[0]]
            prefix = np.concatenate([[0.0], np.cumsum(v[order, k])])
            out += prefix[np.searchsorted(vs, X[:, s[0]], side="right")]
            continue
        for sl in _knot_chunks(n, n):
            out += _indicator_block(X, X[sl], s).astype(np.float64) @ v[sl, k]
    return out


def basis_columns(model, idx):
    """Training-row indicator columns (n x len(idx)) for basis indices idx."""
    subs = model.spec.subsets
    X = model.X_train
    idx = np.asarray(idx, dtype=np.int64)
    cols = np.empty((model.n, idx.size), dtype=bool)
    for c, j in enumerate(idx):
        l, k = divmod(int(j), len(subs))
        cols[:, c] = _indicator_block(X, X[l:l + 1], subs[k])[:, 0]
    return cols


def column_groups(model):
    """Group id per basis index: identical training columns share a group.

    Returns (group_of_index, representative_index_per_group, multiplicity).
    Basis functions in one group always carry the same beta value.
    """
    cached = model.__dict__.get("_column_groups")
    if cached is not None:
        return cached
    X = model.X_train
    n = model.n
    subs = model.spec.subsets
    keys = np.empty((n, len(subs)), dtype=object)
    for k, s in enumerate(subs):
        for sl in _knot_chunks(n, n):
            P = _indicator_block(X, X[sl], s)
            packed = np.packbits(P, axis=0)
            for c, l in enumerate(range(sl.start, sl.stop)):
                keys[l, k] = packed[:, c].tobytes()
    flat = keys.reshape(-1)
    lookup = {}
    group = np.empty(flat.size, dtype=np.int64)
    reps = []
    for j, key in enumerate(flat):
        gid = lookup.get(key)
        if gid is None:
            gid = lookup[key] = len(reps)
            reps.append(j)
        group[j] = gid
    mult = np.bincount(group)
    result = (group, np.asarray(reps, dtype=np.int64), mult)
    model.__dict__["_column_groups"] = result
    return result


# float64 entries allowed in the group-reduced eigenvector matrix
GROUP_E_CAP = 2 * 10**7


def group_eigenvectors(model):
    """Rows of E = H^T U diag(D)^-1 for one representative per column group.

    Shape (G, r). With the multiplicities m from column_groups,
    E_g^T diag(m) E_g = I. Cached on the model; raises OracleCapError when
    G * r exceeds GROUP_E_CAP.
    """
    cached = model.__dict__.get("_group_e")
    if cached is not None:
        return cached
    from .basis import OracleCapError
    _, reps, _ = column_groups(model)
    if reps.size * model.rank > GROUP_E_CAP:
        raise OracleCapError(
            f"group-reduced eigenvector matrix would hold {reps.size * model.rank} "
            f"entries (cap {GROUP_E_CAP})")
    cols = basis_columns(model, reps).astype(np.float64)
    Eg = (cols.T @ model.U) / model.D
    model.__dict__["_group_e"] = Eg
    return Eg
