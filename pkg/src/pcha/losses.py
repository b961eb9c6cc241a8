"""Empirical risks on the PC design for squared-error and logistic losses.

All risks are P_n-averages: ``(1/n) sum_i c_i L_i`` with observation weights
``c`` (all ones unless a bootstrap replicate reweights rows).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit


class LossKind(str, Enum):
    MSE = "mse"
    LOGISTIC = "logistic"


def recode_binary(y):
    """Map {0,1} (or {-1,1}) responses to {-1,+1}."""
    y = np.asarray(y, dtype=float)
    vals = set(np.unique(y).tolist())
    if vals <= {-1.0, 1.0}:
        return y
    if vals <= {0.0, 1.0}:
        return 2.0 * y - 1.0
    raise ValueError(f"logistic responses must be coded {{0,1}} or {{-1,1}}, got {sorted(vals)[:5]}")


@dataclass
class RiskState:
    """PC design, response, intercept and optional row weights."""

    Z: np.ndarray
    y: np.ndarray
    intercept: float = 0.0
    weights: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.Z.shape[0] != self.y.shape[0]:
            raise ValueError("Z and y disagree on the number of rows")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)

    @property
    def n(self):
        return self.y.shape[0]

    def mean(self, v):
        if self.weights is None:
            return v.mean(axis=0)
        return self.weights @ v / self.n

    def linear(self, alpha):
        return self.Z @ alpha + self.intercept


def _pointwise(kind, y, theta):
    if kind == LossKind.MSE:
        return (y - theta) ** 2
    return np.logaddexp(0.0, -y * theta)


def _dtheta(kind, y, theta):
    """dL/dtheta per observation."""
    if kind == LossKind.MSE:
        return -2.0 * (y - theta)
    return -y * expit(-y * theta)


def risk(state, kind, alpha):
    kind = LossKind(kind)
    theta = state.linear(np.asarray(alpha, float))
    return float(state.mean(_pointwise(kind, state.y, theta)))


def grad_alpha(state, kind, alpha):
    """Coordinate gradient of the empirical risk with respect to alpha."""
    kind = LossKind(kind)
    theta = state.linear(np.asarray(alpha, float))
    r = _dtheta(kind, state.y, theta)
    if state.weights is not None:
        r = r * state.weights
    return state.Z.T @ r / state.n


def grad_intercept(state, kind, alpha):
    kind = LossKind(kind)
    theta = state.linear(np.asarray(alpha, float))
    return float(state.mean(_dtheta(kind, state.y, theta)))


def path_gradient(state, kind, alpha):
    """Derivative representer along multiplicative paths (1 + delta h) alpha."""
    alpha = np.asarray(alpha, float)
    return alpha * grad_alpha(state, kind, alpha)


def score(state, kind, alpha, f):
    """Empirical score P_n dL/dtheta (sum_m f(m) phi~_m) in direction f."""
    return float(grad_alpha(state, kind, alpha) @ np.asarray(f, float))
