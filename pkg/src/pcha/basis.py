"""Zero-order indicator spline basis with data-point knots.

The basis is never stored. A basis function is indexed by a knot row ``l``
and a nonempty coordinate subset ``s``; at a point ``x`` it evaluates to
``prod_{j in s} 1{x_j >= knot[l, j]}``. Everything downstream only needs
inner products between rows of the (implicit) design, which reduce to sums
over subsets of products of per-coordinate comparison matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

DEFAULT_ORACLE_CAP = 10**6

# knots x rows per block when streaming over subsets
_BLOCK_ELEMS = 1 << 21


class OracleCapError(ValueError):
    """Raised when a dense-basis operation is requested above the oracle cap."""


@dataclass(frozen=True)
class ScalingMap:
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, raw, clamp=True):
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        if raw.shape[1] != self.lo.shape[0]:
            raise ValueError(
                f"expected {self.lo.shape[0]} columns, got {raw.shape[1]}")
        span = self.hi - self.lo
        degenerate = span <= 0
        safe = np.where(degenerate, 1.0, span)
        out = (raw - self.lo) / safe
        out[:, degenerate] = 0.5
        if clamp:
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def to_dict(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(np.asarray(payload["lo"], float), np.asarray(payload["hi"], float))


def scale_to_unit_cube(raw):
    """Affinely map each column of ``raw`` onto [0, 1].

    Constant columns map to 0.5. Returns the scaled matrix and the map, which
    clamps out-of-range test points when applied later.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.size == 0 or raw.shape[0] == 0:
        raise ValueError("cannot scale an empty covariate matrix")
    if not np.all(np.isfinite(raw)):
        raise ValueError("covariates must be finite")
    smap = ScalingMap(raw.min(axis=0), raw.max(axis=0))
    return smap.apply(raw), smap


def subsets(d, max_degree=None):
    """Nonempty coordinate subsets, by increasing size then lexicographic."""
    top = d if max_degree is None else min(max_degree, d)
    out = []
    for k in range(1, top + 1):
        out.extend(combinations(range(d), k))
    return out


@dataclass(frozen=True)
class BasisSpec:
    """Zero-order basis whose knots are the rows of ``knots`` (in [0,1]^d)."""

    knots: np.ndarray
    max_degree: int | None = None
    oracle_cap: int = DEFAULT_ORACLE_CAP

    def __post_init__(self):
        knots = np.atleast_2d(np.asarray(self.knots, dtype=float))
        if knots.shape[0] < 1 or knots.shape[1] < 1:
            raise ValueError("knots must have n >= 1 rows and d >= 1 columns")
        if np.any(knots < 0) or np.any(knots > 1):
            raise ValueError("knots must lie in [0, 1]")
        if self.max_degree is not None and self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        object.__setattr__(self, "knots", knots)

    order = 0

    @property
    def n(self):
        return self.knots.shape[0]

    @property
    def d(self):
        return self.knots.shape[1]

    @property
    def subsets(self):
        return subsets(self.d, self.max_degree)

    @property
    def N(self):
        return self.n * len(self.subsets)

    def _check_cap(self):
        if self.N > self.oracle_cap:
            raise OracleCapError(
                f"basis has N={self.N} columns, above the oracle cap "
                f"{self.oracle_cap}; use the kernel operations instead")


def eval_basis_row(spec, x):
    """Evaluate all N basis functions at ``x`` (knot-major ordering)."""
    spec._check_cap()
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != spec.d:
        raise ValueError(f"x has {x.shape[0]} coordinates, basis has d={spec.d}")
    ge = x[None, :] >= spec.knots  # n x d
    cols = [np.all(ge[:, list(s)], axis=1) for s in spec.subsets]
    return np.stack(cols, axis=1).reshape(-1).astype(np.int64)


def design_matrix(spec, X):
    """Materialize the m x N design at oracle scale (tests and --emit-beta)."""
    spec._check_cap()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.stack([eval_basis_row(spec, x) for x in X])


def _indicator_block(X, knots, s):
    """m x b matrix of prod_{j in s} 1{X[:, j] >= knots[:, j]}."""
    j = s[0]
    block = X[:, j][:, None] >= knots[:, j][None, :]
    for j in s[1:]:
        block &= X[:, j][:, None] >= knots[:, j][None, :]
    return block


def _knot_chunks(n_knots, n_rows):
    step = max(1, _BLOCK_ELEMS // max(n_rows, 1))
    for start in range(0, n_knots, step):
        yield slice(start, min(start + step, n_knots))


def _shared_counts(spec, A, B):
    """sum_j phi_j(a) phi_j(b) for rows a of A, b of B, as int64."""
    out = np.zeros((A.shape[0], B.shape[0]), dtype=np.float64)
    knots = spec.knots
    for s in spec.subsets:
        for sl in _knot_chunks(spec.n, max(A.shape[0], B.shape[0])):
            pa = _indicator_block(A, knots[sl], s).astype(np.float64)
            pb = pa if B is A else _indicator_block(B, knots[sl], s).astype(np.float64)
            # 0/1 products summed in float64 are exact below 2**53
            out += pa @ pb.T
    return np.rint(out).astype(np.int64)


def build_kernel_matrix(spec, X=None):
    """Gram matrix K = H H^T of the implicit design, exact in int64.

    ``K[i, i']`` counts the basis functions active at both rows; with the full
    subset lattice this equals ``sum_l (prod_j (1 + 1{knot_lj <= min(x_ij, x_i'j)}) - 1)``.
    """
    X = spec.knots if X is None else np.atleast_2d(np.asarray(X, dtype=float))
    return _shared_counts(spec, X, X)


def build_kernel_matrix_closed_form(spec, X=None):
    """Per-knot closed form of the Gram matrix (used when 2^d is large).

    For each knot, the number of coordinates where the knot lies below both
    points determines the count of shared subsets via a partial sum of
    binomial coefficients (elementary symmetric polynomial of ones).
    """
    X = spec.knots if X is None else np.atleast_2d(np.asarray(X, dtype=float))
    d = spec.d
    top = d if spec.max_degree is None else min(spec.max_degree, d)
    # shared[c] = number of nonempty subsets of size <= top within c coordinates
    from math import comb
    shared = np.array([sum(comb(c, k) for k in range(1, min(c, top) + 1))
                       for c in range(d + 1)], dtype=np.int64)
    n = X.shape[0]
    K = np.zeros((n, n), dtype=np.int64)
    for l in range(spec.n):
        active = (X >= spec.knots[l]).astype(np.int64)  # n x d
        K += shared[active @ active.T]
    return K


def kernel_cross(spec, X_new):
    """Rows k(x_new, knots): shared active basis counts with each training row.

    Knots are the training rows, so this is the cross-Gram between ``X_new``
    and the training design. Accepts a single point or an m x d matrix.
    """
    X_new = np.asarray(X_new, dtype=float)
    single = X_new.ndim == 1
    X_new = np.atleast_2d(X_new)
    if X_new.shape[1] != spec.d:
        raise ValueError(f"x_new has {X_new.shape[1]} columns, basis has d={spec.d}")
    out = _shared_counts(spec, X_new, spec.knots)
    return out[0] if single else out
