"""Maximally predictable portfolio (MPP) objectives and solvers.

A portfolio's predictability over a window of ``T`` months is measured by

    R2(w) = 1 - (w' E'E w) / (w' R'R w)

where ``R`` holds observed returns and ``E = R - Q`` the forecast errors.
Maximizing R2 over a polytope of long-only weights is a nonconvex
fractional program; :func:`nla_solve` attacks it with the normalized
linearization algorithm, which reduces it to a short sequence of convex QPs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .numerics import (
    QpProblem,
    QpSolution,
    QpStatus,
    max_generalized_eigenpair,
    solve_qp,
)

logger = logging.getLogger(__name__)

DEFAULT_RHO = -0.1
DEFAULT_NLA_EPS = 1e-3
WEIGHT_TOL = 1e-8
# subproblem accuracy still good enough to take a step when the QP stalls short of qp_tol
NLA_KKT_ACCEPT = 1e-6


class MppError(RuntimeError):
    """Base class for optimizer failures."""


class InfeasibleConstraints(MppError):
    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message if iteration is None else f"{message} (iteration {iteration})")
        self.iteration = iteration


class DenominatorNonPositive(MppError):
    """No feasible portfolio has a strictly positive expected return."""


class ZeroVariation(MppError):
    """Portfolio return variation is zero, so R2 is undefined."""


@dataclass(frozen=True)
class ConstraintSet:
    """The weight polytope ``{1'w = 1, 0 <= w <= ub, mu'w >= rho, A w <= b}``.

    ``general_lhs`` defaults to the identity and ``general_rhs`` to ones,
    which makes the general block redundant with the simplex.
    """

    upper_bounds: NDArray[np.float64]
    mu: NDArray[np.float64]
    required_return: float = DEFAULT_RHO
    general_lhs: NDArray[np.float64] | None = None
    general_rhs: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        ub = np.asarray(self.upper_bounds, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        n = ub.size
        if mu.size != n:
            raise ValueError(f"mu has length {mu.size}, expected {n}")
        if np.any(ub < 0) or np.any(ub > 1):
            raise ValueError("upper bounds must lie in [0, 1]")
        if ub.sum() < 1.0 - WEIGHT_TOL:
            raise InfeasibleConstraints(f"upper bounds sum to {ub.sum():.6g} < 1")
        A = np.eye(n) if self.general_lhs is None else np.atleast_2d(np.asarray(self.general_lhs, dtype=np.float64))
        b = np.ones(A.shape[0]) if self.general_rhs is None else np.asarray(self.general_rhs, dtype=np.float64).reshape(-1)
        if A.shape[1] != n or b.size != A.shape[0]:
            raise ValueError("general constraint block has inconsistent shape")
        object.__setattr__(self, "upper_bounds", ub)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "general_lhs", A)
        object.__setattr__(self, "general_rhs", b)

    @classmethod
    def uniform(cls, n: int, cap: float, mu: ArrayLike | None = None, required_return: float = DEFAULT_RHO) -> "ConstraintSet":
        """Uniform cap on every asset, relaxed to ``1/n`` when ``n * cap < 1``."""
        cap = max(float(cap), 1.0 / n)
        return cls(np.full(n, min(cap, 1.0)), np.zeros(n) if mu is None else np.asarray(mu, float), required_return)

    @property
    def n(self) -> int:
        return self.upper_bounds.size

    def subset(self, idx: ArrayLike) -> "ConstraintSet":
        """Restrict to the assets in ``idx`` (general block dropped to the default)."""
        idx = np.asarray(idx)
        ub = self.upper_bounds[idx]
        if ub.sum() < 1.0:
            ub = np.full(ub.size, max(float(ub.max(initial=0.0)), 1.0 / ub.size))
        return ConstraintSet(np.minimum(ub, 1.0), self.mu[idx], self.required_return)

    def violation(self, w: ArrayLike) -> float:
        """Largest violation of any constraint at ``w`` (0 when feasible)."""
        w = np.asarray(w, dtype=np.float64)
        parts = [
            abs(w.sum() - 1.0),
            float(np.max(-w, initial=0.0)),
            float(np.max(w - self.upper_bounds, initial=0.0)),
            self.required_return - float(self.mu @ w),
            float(np.max(self.general_lhs @ w - self.general_rhs, initial=0.0)),
        ]
        return max(0.0, *parts)

    def contains(self, w: ArrayLike, tol: float = WEIGHT_TOL) -> bool:
        return self.violation(w) <= tol

    def qp_blocks(self) -> tuple[NDArray, NDArray, NDArray, NDArray]:
        """Equality and inequality blocks of the polytope in ``w`` coordinates."""
        n = self.n
        Aeq = np.ones((1, n))
        beq = np.ones(1)
        G = np.vstack([-self.mu[None, :], self.general_lhs])
        h = np.concatenate([[-self.required_return], self.general_rhs])
        return Aeq, beq, G, h


@dataclass(frozen=True)
class ErrorPanel:
    """Forecast errors ``E = R - Q`` and observed returns ``R`` over one window."""

    E: NDArray[np.float64]
    R: NDArray[np.float64]

    def __post_init__(self) -> None:
        E = np.atleast_2d(np.asarray(self.E, dtype=np.float64))
        R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        if E.shape != R.shape:
            raise ValueError(f"E {E.shape} and R {R.shape} differ in shape")
        if not (np.all(np.isfinite(E)) and np.all(np.isfinite(R))):
            raise ValueError("error panel has non-finite entries")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "R", R)

    @classmethod
    def from_forecasts(cls, returns: ArrayLike, forecasts: ArrayLike) -> "ErrorPanel":
        R = np.asarray(returns, dtype=np.float64)
        return cls(R - np.asarray(forecasts, dtype=np.float64), R)

    @property
    def n(self) -> int:
        return self.E.shape[1]

    def columns(self, idx: ArrayLike) -> "ErrorPanel":
        return ErrorPanel(self.E[:, idx], self.R[:, idx])

    def scaled(self, c: float) -> "ErrorPanel":
        return ErrorPanel(self.E * c, self.R * c)

    def error_gram(self) -> NDArray[np.float64]:
        return self.E.T @ self.E

    def return_gram(self) -> NDArray[np.float64]:
        return self.R.T @ self.R


@dataclass(frozen=True)
class MppSolution:
    weights: NDArray[np.float64]
    objective_ratio: float
    r_squared: float
    iterations: int
    kkt_residual: float
    status: QpStatus = QpStatus.OPTIMAL
    objective: float = math.nan
    history: tuple[float, ...] = field(default=())


def _ratio(w: NDArray[np.float64], errors: ErrorPanel) -> float:
    num = errors.E @ w
    den = errors.R @ w
    d = float(den @ den)
    if d <= 0.0:
        raise ZeroVariation("portfolio return variation is zero")
    return float(num @ num) / d


def _solution(w, errors, iterations, kkt, status=QpStatus.OPTIMAL, objective=math.nan, history=()):
    ratio = _ratio(w, errors)
    return MppSolution(
        weights=w,
        objective_ratio=ratio,
        r_squared=1.0 - ratio,
        iterations=iterations,
        kkt_residual=kkt,
        status=status,
        objective=objective,
        history=tuple(history),
    )


def evaluate_r2(weights: ArrayLike, errors: ErrorPanel) -> float:
    """Portfolio coefficient of determination ``1 - w'E'Ew / w'R'Rw``.

    May be negative when the forecast errors exceed the return variation.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.size != errors.n:
        raise ValueError(f"weights have length {w.size}, panel has {errors.n} assets")
    return 1.0 - _ratio(w, errors)


@dataclass(frozen=True)
class UnconstrainedMpp:
    r_squared: float
    weights: NDArray[np.float64]
    normalized: bool = True


def unconstrained_mpp(sigma_hat: ArrayLike, sigma0: ArrayLike) -> UnconstrainedMpp:
    """Eigen solution of ``max w'S_hat w / w'S0 w`` without weight constraints.

    Weights are the top generalized eigenvector scaled to sum to one, so they
    may be negative. When the eigenvector's entries sum to (almost) zero the
    normalization is undefined: the unit-norm eigenvector is returned with
    ``normalized=False``.

    Maximizing ``S_hat`` against ``S0`` is the same as minimizing the noise
    covariance ``S0 - S_hat`` against ``S0``, since the two ratios add to one.
    """
    lam, v = max_generalized_eigenpair(sigma_hat, sigma0)
    total = float(v.sum())
    if abs(total) <= 1e-12:
        logger.warning("MPP eigenvector sums to zero; returning unit-norm direction")
        return UnconstrainedMpp(lam, v / np.linalg.norm(v), normalized=False)
    return UnconstrainedMpp(lam, v / total)


def _pow2_scale(x: NDArray[np.float64]) -> float:
    """Power of two close to ``1/||x||_F``; rescaling by it is exact in floating point."""
    nrm = float(np.linalg.norm(x))
    if nrm == 0.0 or not np.isfinite(nrm):
        return 1.0
    return math.ldexp(1.0, -math.frexp(nrm)[1])


def _nla_subproblem(M, Ru, cs: ConstraintSet) -> QpProblem:
    """QP(u): ``min y'My`` over the homogenized polytope with ``y'R'u = 1``."""
    n = cs.n
    ones = np.ones(n)
    G = np.vstack([
        (cs.required_return * ones - cs.mu)[None, :],      # mu'y >= rho 1'y
        np.eye(n) - np.outer(cs.upper_bounds, ones),       # y <= (1'y) ub
        cs.general_lhs - np.outer(cs.general_rhs, ones),   # (A - b 1') y <= 0
    ])
    return QpProblem(
        P=2.0 * M,
        q=np.zeros(n),
        eq_lhs=Ru[None, :],
        eq_rhs=np.ones(1),
        ineq_lhs=G,
        ineq_rhs=np.zeros(G.shape[0]),
        lower=np.zeros(n),
    )


@dataclass
class _NlaRun:
    weights: NDArray[np.float64]
    ratio: float
    iterations: int
    kkt: float
    status: QpStatus
    history: list[float]


def _nla_run(E, R, M, cs: ConstraintSet, y0, eps: float, max_iter: int, qp_tol: float) -> _NlaRun:
    u = R @ y0
    un = float(np.linalg.norm(u))
    if un == 0.0:
        raise ZeroVariation("start portfolio has zero return variation")
    u = u / un
    history: list[float] = []
    best_w, best_ratio = None, math.inf
    kkt = math.nan
    status = QpStatus.MAX_ITERATIONS
    k = 0
    for k in range(1, max_iter + 1):
        sol = solve_qp(_nla_subproblem(M, R.T @ u, cs), tol=qp_tol)
        if sol.status is QpStatus.INFEASIBLE:
            raise InfeasibleConstraints("NLA subproblem infeasible", iteration=k)
        if not sol.ok and not (sol.status is QpStatus.MAX_ITERATIONS and sol.kkt_residual <= NLA_KKT_ACCEPT):
            logger.warning("NLA subproblem %d returned %s", k, sol.status.value)
            status = sol.status
            break
        kkt = sol.kkt_residual
        y_bar = np.maximum(sol.x, 0.0)
        u_bar = R @ y_bar
        norm = float(np.linalg.norm(u_bar))
        u = u_bar / norm
        w = y_bar / y_bar.sum()
        num = E @ w
        den = R @ w
        ratio = float(num @ num) / float(den @ den)
        history.append(ratio)
        if ratio <= best_ratio:
            best_w, best_ratio = w, ratio
        if norm <= 1.0 + eps:
            status = QpStatus.OPTIMAL
            break
    if best_w is None:
        best_w = y0 / y0.sum()
        best_ratio = math.inf
    else:
        best_w, best_ratio = _face_polish(best_w, best_ratio, E, R, cs)
    return _NlaRun(best_w, best_ratio, k, kkt, status, history)


def _face_polish(w, ratio, E, R, cs: ConstraintSet, tol: float = 1e-7):
    """Solve the ratio exactly on the face NLA has identified.

    With the support ``S`` fixed and no upper bound binding, the restricted
    problem is the smallest generalized eigenpair of ``(E_S'E_S, R_S'R_S)``.
    The eigen solution replaces ``w`` only if it is feasible and strictly
    better, so the step can never hurt.
    """
    support = w > tol
    if np.any(w[support] >= cs.upper_bounds[support] - tol) and support.sum() > 1:
        return w, ratio
    S = np.flatnonzero(support)
    Es, Rs = E[:, S], R[:, S]
    N = Rs.T @ Rs
    try:
        evals = np.linalg.eigvalsh(N)
        if evals.min() <= 1e-12 * max(evals.max(), 0.0):
            return w, ratio
        _, vecs = scipy.linalg.eigh(Es.T @ Es, N, subset_by_index=[0, 0])
    except (np.linalg.LinAlgError, ValueError):
        return w, ratio
    v = vecs[:, 0]
    if v.sum() < 0:
        v = -v
    if np.any(v < 0) or v.sum() <= 0:
        return w, ratio
    cand = np.zeros_like(w)
    cand[S] = v / v.sum()
    if not cs.contains(cand):
        return w, ratio
    num, den = E @ cand, R @ cand
    cand_ratio = float(num @ num) / float(den @ den)
    if cand_ratio < ratio:
        return cand, cand_ratio
    return w, ratio


def nla_solve(
    errors: ErrorPanel,
    constraints: ConstraintSet,
    eps: float = DEFAULT_NLA_EPS,
    max_iter: int = 200,
    extra_starts: int = 3,
    qp_tol: float = 1e-9,
) -> MppSolution:
    """Constrained MPP by normalized linearization.

    Works in homogeneous coordinates ``y = w / ||R w||``. Each iteration
    replaces the sphere ``||R y|| = 1`` by its tangent plane at the current
    point ``u``, solves the resulting convex QP, and projects back onto the
    sphere. Stops once the QP solution lands within ``1 + eps`` of the
    sphere.

    The iteration is a local method. It always starts from the
    equal-weight portfolio; ``extra_starts`` further runs start from the
    single-asset portfolios with the lowest individual error ratios, and
    the best final point over all runs is returned. With ``n <= 3`` and the
    default this visits every vertex of the simplex.

    Raises
    ------
    InfeasibleConstraints
        If a QP subproblem is infeasible; the iteration index is attached.
    """
    if errors.n != constraints.n:
        raise ValueError(f"panel has {errors.n} assets, constraints have {constraints.n}")
    n = errors.n
    # Common power-of-two rescaling leaves the argmin unchanged and keeps the
    # iteration bitwise invariant to power-of-two rescaling of the inputs.
    c = _pow2_scale(errors.R)
    E = errors.E * c
    R = errors.R * c
    if not np.any(R):
        raise ZeroVariation("return window is identically zero")
    M = E.T @ E

    starts = [np.full(n, 1.0 / math.sqrt(n))]
    if extra_starts > 0 and n > 1:
        num = np.einsum("ti,ti->i", E, E)
        den = np.einsum("ti,ti->i", R, R)
        with np.errstate(divide="ignore", invalid="ignore"):
            vertex_ratio = np.where(den > 0, num / den, np.inf)
        for i in np.argsort(vertex_ratio, kind="stable")[:extra_starts]:
            if np.isfinite(vertex_ratio[i]):
                starts.append(np.eye(n)[i])

    best: _NlaRun | None = None
    total_iter = 0
    for y0 in starts:
        run = _nla_run(E, R, M, constraints, y0, eps, max_iter, qp_tol)
        total_iter += run.iterations
        if best is None or run.ratio < best.ratio:
            best = run
    w = _polish(best.weights, constraints)
    ew = np.full(n, 1.0 / n)
    start_ratio = _ratio(ew, errors)
    if _ratio(w, errors) > start_ratio and constraints.contains(ew):
        w = ew  # never end worse than the feasible start
    history = [start_ratio, *best.history] if best is not None else [start_ratio]
    return _solution(
        w,
        errors,
        total_iter,
        best.kkt,
        status=best.status,
        objective=float(w @ errors.error_gram() @ w),
        history=history,
    )


def _polish(w: NDArray[np.float64], cs: ConstraintSet) -> NDArray[np.float64]:
    """Remove interior-point round-off: clip to the box and renormalize."""
    w = np.clip(w, 0.0, cs.upper_bounds)
    return w / w.sum()


def min_error_weights(errors: ErrorPanel, constraints: ConstraintSet, tol: float = 1e-9) -> MppSolution:
    """Feasible weights minimizing the squared portfolio forecast error ``w'E'Ew``."""
    if errors.n != constraints.n:
        raise ValueError(f"panel has {errors.n} assets, constraints have {constraints.n}")
    c = _pow2_scale(errors.E) if np.any(errors.E) else 1.0
    E = errors.E * c
    Aeq, beq, G, h = constraints.qp_blocks()
    prob = QpProblem(2.0 * (E.T @ E), np.zeros(errors.n), Aeq, beq, G, h,
                     lower=np.zeros(errors.n), upper=constraints.upper_bounds)
    sol = solve_qp(prob, tol=tol)
    if sol.status is QpStatus.INFEASIBLE:
        raise InfeasibleConstraints("constraint set is empty")
    if not sol.ok:
        raise MppError(f"min-error QP failed: {sol.status.value}")
    w = _polish(sol.x, constraints)
    return _solution(w, errors, sol.iterations, sol.kkt_residual, objective=float(w @ errors.error_gram() @ w))


def min_error_return_ratio(
    errors: ErrorPanel,
    mu_forecast: ArrayLike,
    constraints: ConstraintSet,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> MppSolution:
    """Minimize ``w'E'Ew / mu'w`` over the feasible set by Dinkelbach's method.

    Each step solves the convex QP ``min w'E'Ew - theta * mu'w`` and updates
    ``theta`` to the ratio at its solution, stopping when the parametric
    optimum ``F(theta)`` is within ``tol`` of zero. Only portfolios with
    ``mu'w >= tol`` are admitted. ``MppSolution.objective`` holds the ratio
    and ``history`` the sequence of ``theta`` values.
    """
    mu = np.asarray(mu_forecast, dtype=np.float64).reshape(-1)
    n = errors.n
    if mu.size != n or constraints.n != n:
        raise ValueError("dimension mismatch between panel, forecasts and constraints")
    Q = errors.error_gram()
    Aeq, beq, G, h = constraints.qp_blocks()
    G = np.vstack([G, -mu[None, :]])
    h = np.concatenate([h, [-tol]])
    lo, hi = np.zeros(n), constraints.upper_bounds

    # Most profitable feasible portfolio: certifies the denominator can be positive.
    base = QpProblem(np.zeros((n, n)), -mu, Aeq, beq, G[:-1], h[:-1], lower=lo, upper=hi)
    start = solve_qp(base, tol=1e-10)
    if start.status is QpStatus.INFEASIBLE:
        raise InfeasibleConstraints("constraint set is empty")
    if not start.ok or float(mu @ start.x) <= tol:
        raise DenominatorNonPositive("no feasible portfolio has positive forecast return")
    w = np.clip(start.x, lo, hi)
    w = w / w.sum()
    theta = float(w @ Q @ w) / float(mu @ w)
    thetas = [theta]
    kkt = start.kkt_residual
    it = 0
    status = QpStatus.MAX_ITERATIONS
    for it in range(1, max_iter + 1):
        sol = solve_qp(QpProblem(2.0 * Q, -theta * mu, Aeq, beq, G, h, lower=lo, upper=hi), tol=1e-10)
        if sol.status is QpStatus.INFEASIBLE:
            raise InfeasibleConstraints("Dinkelbach subproblem infeasible", iteration=it)
        if not sol.ok:
            raise MppError(f"Dinkelbach subproblem failed: {sol.status.value}")
        kkt = sol.kkt_residual
        x = sol.x
        f_theta = float(x @ Q @ x) - theta * float(mu @ x)
        if f_theta > -tol:
            status = QpStatus.OPTIMAL
            break
        w = x
        new_theta = float(x @ Q @ x) / float(mu @ x)
        theta = min(theta, new_theta)
        thetas.append(theta)
    w = _polish(w, constraints)
    ratio = float(w @ Q @ w) / float(mu @ w)
    return _solution(w, errors, it, kkt, status=status, objective=ratio, history=thetas)


def _cap_and_normalize(raw: NDArray[np.float64], ub: NDArray[np.float64]) -> NDArray[np.float64]:
    """Scale nonnegative ``raw`` to sum to one, water-filling any excess above ``ub``.

    Assets hitting their cap are fixed there and the remainder is shared out
    among the rest in proportion to ``raw``.
    """
    n = raw.size
    w = np.zeros(n)
    free = np.ones(n, dtype=bool)
    budget = 1.0
    for _ in range(n + 1):
        total = raw[free].sum()
        if total <= 0:
            # nothing left to weight by proportion: spread evenly within caps
            w[free] = np.minimum(ub[free], budget / max(free.sum(), 1))
            break
        trial = budget * raw / total
        over = free & (trial > ub)
        if not np.any(over):
            w[free] = trial[free]
            break
        w[over] = ub[over]
        budget -= ub[over].sum()
        free &= ~over
    return w


def error_mean_weights(
    errors: ErrorPanel,
    lookback: int,
    upper_bounds: ArrayLike | None = None,
    mode: str = "inverse",
) -> NDArray[np.float64]:
    """Heuristic weights from each stock's mean absolute error over ``lookback`` months.

    ``mode="inverse"`` (default) weights stocks by ``1/mean|e|`` so that
    historically accurate forecasts get more capital. ``mode="direct"``
    weights by ``mean|e|`` itself. Stocks with zero past error receive
    their full cap before anything else is allocated.
    """
    E = errors.E
    T, n = E.shape
    if lookback < 1 or lookback > T:
        raise ValueError(f"lookback {lookback} outside [1, {T}]")
    ub = np.ones(n) if upper_bounds is None else np.broadcast_to(np.asarray(upper_bounds, float), (n,)).copy()
    if ub.sum() < 1.0 - WEIGHT_TOL:
        raise InfeasibleConstraints(f"upper bounds sum to {ub.sum():.6g} < 1")
    m = np.abs(E[T - lookback:]).mean(axis=0)
    if mode == "direct":
        if not np.any(m > 0):
            return _cap_and_normalize(np.ones(n), ub)
        return _cap_and_normalize(m, ub)
    if mode != "inverse":
        raise ValueError(f"unknown mode {mode!r}")
    perfect = m == 0
    if np.any(perfect):
        logger.info("%d stock(s) with zero past error get their full cap", int(perfect.sum()))
        w = np.zeros(n)
        w[perfect] = _cap_and_normalize(np.ones(int(perfect.sum())), ub[perfect])
        rest = 1.0 - w.sum()
        if rest > WEIGHT_TOL and np.any(~perfect):
            sub = _cap_and_normalize(1.0 / m[~perfect], ub[~perfect] / rest)
            w[~perfect] = rest * sub
        return w / w.sum()
    return _cap_and_normalize(1.0 / m, ub)
