"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual problem over paired multipliers ``a, a* in [0, C]``

    min  1/2 (a - a*)' K (a - a*) + eps * 1'(a + a*) - y'(a - a*)
    s.t. 1'(a - a*) = 0

is handed to :func:`mppfolio.numerics.solve_qp`. Predictions are
``f(x) = sum_i beta_i K(x, x_i) + b`` with ``beta = a - a*``. The kernel
divides the squared distance by the feature count so that ``gamma`` keeps
its meaning as the number of features changes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..numerics import QpProblem, QpStatus, solve_qp

logger = logging.getLogger(__name__)


class SvrFitError(RuntimeError):
    pass


def rbf_kernel(A: ArrayLike, B: ArrayLike, gamma: float) -> NDArray[np.float64]:
    """``exp(-gamma * ||a - b||^2 / M)`` for all row pairs, ``M`` the feature count."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    M = A.shape[1]
    d2 = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(d2, 0.0, out=d2)
    # exact zero distance for identical rows, so K(x, x) == 1 bitwise
    same = (A[:, None, :] == B[None, :, :]).all(-1) if A.shape[0] * B.shape[0] <= 4_000_000 else None
    if same is not None:
        d2[same] = 0.0
    return np.exp(-gamma * d2 / M)


@dataclass(frozen=True)
class SvrModel:
    support_coefficients: NDArray[np.float64]
    bias: float
    kernel_gamma: float
    cost: float
    epsilon_tube: float
    training_points: NDArray[np.float64]

    @property
    def n_support(self) -> int:
        return self.support_coefficients.size

    def predict(self, X: ArrayLike) -> NDArray[np.float64] | float:
        return predict_svr(self, X)

    def to_dict(self) -> dict:
        return {
            "family": "svr",
            "bias": self.bias,
            "gamma": self.kernel_gamma,
            "C": self.cost,
            "epsilon": self.epsilon_tube,
            "dual": [float(c) for c in self.support_coefficients],
            "support_vectors": self.training_points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvrModel":
        sv = np.asarray(d["support_vectors"], float)
        return cls(np.asarray(d["dual"], float), float(d["bias"]), float(d["gamma"]), float(d["C"]),
                   float(d["epsilon"]), sv.reshape(len(d["dual"]), -1) if sv.size else np.zeros((0, 0)))


def _bias(beta, g, C, eps, tol):
    """Intercept from the KKT conditions, ``g = y - K beta``.

    Free multipliers pin ``b`` exactly; otherwise ``b`` is the midpoint of
    the interval allowed by the bounded ones.
    """
    upper_free = (beta > tol) & (beta < C - tol)
    lower_free = (beta < -tol) & (beta > -C + tol)
    if np.any(upper_free) or np.any(lower_free):
        vals = np.concatenate([g[upper_free] - eps, g[lower_free] + eps])
        return float(vals.mean())
    lo, hi = -np.inf, np.inf
    zero = np.abs(beta) <= tol
    at_upper = beta >= C - tol
    at_lower = beta <= -C + tol
    if np.any(zero):
        lo = max(lo, float(np.max(g[zero] - eps)))
        hi = min(hi, float(np.min(g[zero] + eps)))
    if np.any(at_upper):
        hi = min(hi, float(np.min(g[at_upper] - eps)))
    if np.any(at_lower):
        lo = max(lo, float(np.max(g[at_lower] + eps)))
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    return float(lo if np.isfinite(lo) else hi)


def fit_svr(
    X: ArrayLike,
    y: ArrayLike,
    cost: float = 3.0,
    gamma: float = 0.1,
    epsilon_tube: float = 0.1,
    tol: float = 1e-9,
) -> SvrModel:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if cost <= 0 or gamma <= 0:
        raise ValueError("cost and gamma must be positive")
    if X.shape[0] != y.size or y.size == 0:
        raise ValueError(f"X {X.shape} and y {y.shape} do not align")
    N = y.size
    if N > 1 and np.all(X == X[0]):
        # every kernel entry is 1: the fit is a constant
        return SvrModel(np.zeros(0), float(y.mean()), gamma, cost, epsilon_tube, np.zeros((0, X.shape[1])))

    K = rbf_kernel(X, X, gamma)
    P = np.block([[K, -K], [-K, K]])
    q = np.concatenate([epsilon_tube - y, epsilon_tube + y])
    eq = np.concatenate([np.ones(N), -np.ones(N)])[None, :]
    sol = solve_qp(QpProblem(P, q, eq, np.zeros(1), lower=0.0, upper=cost), tol=tol)
    if sol.status is not QpStatus.OPTIMAL:
        raise SvrFitError(f"SVR dual QP failed: {sol.status.value}")
    a = np.clip(sol.x[:N], 0.0, cost)
    a_star = np.clip(sol.x[N:], 0.0, cost)
    beta = a - a_star
    thresh = 1e-7 * cost
    beta[np.abs(beta) <= thresh] = 0.0
    g = y - K @ beta
    b = _bias(beta, g, cost, epsilon_tube, thresh)
    keep = beta != 0.0
    return SvrModel(beta[keep], b, float(gamma), float(cost), float(epsilon_tube), X[keep].copy())


def predict_svr(model: SvrModel, X: ArrayLike) -> NDArray[np.float64] | float:
    X = np.asarray(X, dtype=np.float64)
    rows = np.atleast_2d(X)
    if model.n_support == 0:
        out = np.full(rows.shape[0], model.bias)
    else:
        out = rbf_kernel(rows, model.training_points, model.kernel_gamma) @ model.support_coefficients + model.bias
    return float(out[0]) if X.ndim == 1 else out
