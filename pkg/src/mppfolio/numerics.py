"""Dense linear algebra kernels: covariance estimation, generalized
symmetric eigenpairs and a primal-dual interior point QP solver.

The QP solver handles problems of the form::

    minimize    0.5 * x' P x + q' x
    subject to  A x  = b
                G x <= h
                lb <= x <= ub

with ``P`` positive semidefinite. It is a Mehrotra predictor-corrector
method on the dense reduced KKT system, sized for the small problems the
portfolio optimizers produce (a few hundred variables at most).
"""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-8
GAP_TOL = 1e-8
MAX_QP_ITER = 200
PSD_FLOOR = 1e-10
STALL_ITER = 25


class NumericsError(ValueError):
    """Raised for malformed inputs to the numerical kernels."""


class QpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITERATIONS = "MaxIterations"


def symmetrize(a: ArrayLike) -> NDArray[np.float64]:
    """Return ``(a + a') / 2`` as a float array with exact symmetry."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {m.shape}")
    s = 0.5 * (m + m.T)
    # 0.5*(a+b) is commutative in IEEE arithmetic, so s == s.T bitwise.
    return s


def repair_psd(p: NDArray[np.float64], floor: float = PSD_FLOOR) -> NDArray[np.float64]:
    """Clamp eigenvalues of a symmetric matrix below ``floor * trace``.

    The input is returned unchanged (same object) when no eigenvalue falls
    below the floor, so well-conditioned problems are not perturbed.
    """
    p = symmetrize(p)
    if p.size == 0:
        return p
    tr = float(np.trace(p))
    thresh = floor * max(tr, 0.0)
    vals, vecs = np.linalg.eigh(p)
    if vals.min() >= thresh:
        return p
    vals = np.maximum(vals, thresh)
    return symmetrize((vecs * vals) @ vecs.T)


def sample_covariance(panel: ArrayLike, demean: bool = True) -> NDArray[np.float64]:
    """``(1/T) X'X`` of a T x k panel, optionally after column de-meaning."""
    x = np.asarray(panel, dtype=np.float64)
    if x.ndim != 2:
        raise NumericsError("panel must be two-dimensional")
    if x.shape[0] < 2:
        raise NumericsError(f"need at least 2 rows, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericsError("panel contains non-finite entries")
    if demean:
        x = x - x.mean(axis=0)
    return symmetrize(x.T @ x / x.shape[0])


def max_generalized_eigenpair(a: ArrayLike, b: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """Largest eigenvalue of the pencil ``a v = lam b v`` and its eigenvector.

    The eigenvector is normalized to ``v' b v = 1`` and its sign is chosen so
    that the entry of largest magnitude is positive.
    """
    a = symmetrize(a)
    b = symmetrize(b)
    if a.shape != b.shape:
        raise NumericsError(f"dimension mismatch: {a.shape} vs {b.shape}")
    bvals = np.linalg.eigvalsh(b)
    if bvals.max() <= 0 or bvals.min() <= 1e-12 * bvals.max():
        raise NumericsError("b is not positive definite")
    n = a.shape[0]
    vals, vecs = scipy.linalg.eigh(a, b, subset_by_index=[n - 1, n - 1])
    v = vecs[:, 0]
    v = v / np.sqrt(v @ b @ v)
    k = int(np.argmax(np.abs(v)))
    if v[k] < 0:
        v = -v
    return float(vals[0]), v


@dataclass(frozen=True)
class QpProblem:
    """Convex QP data. Missing constraint blocks may be left as ``None``."""

    P: NDArray[np.float64]
    q: NDArray[np.float64]
    eq_lhs: NDArray[np.float64] | None = None
    eq_rhs: NDArray[np.float64] | None = None
    ineq_lhs: NDArray[np.float64] | None = None
    ineq_rhs: NDArray[np.float64] | None = None
    lower: NDArray[np.float64] | None = None
    upper: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        P = symmetrize(self.P)
        n = P.shape[0]
        q = np.asarray(self.q, dtype=np.float64).reshape(-1)
        if q.shape != (n,):
            raise NumericsError(f"q has length {q.size}, expected {n}")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "q", q)
        for lhs_name, rhs_name in (("eq_lhs", "eq_rhs"), ("ineq_lhs", "ineq_rhs")):
            lhs, rhs = getattr(self, lhs_name), getattr(self, rhs_name)
            if lhs is None:
                lhs = np.zeros((0, n))
                rhs = np.zeros(0)
            lhs = np.atleast_2d(np.asarray(lhs, dtype=np.float64))
            rhs = np.asarray(rhs, dtype=np.float64).reshape(-1)
            if lhs.shape[1] != n or lhs.shape[0] != rhs.size:
                raise NumericsError(f"{lhs_name}/{rhs_name} shapes {lhs.shape}/{rhs.shape} inconsistent with n={n}")
            object.__setattr__(self, lhs_name, lhs)
            object.__setattr__(self, rhs_name, rhs)
        for name, fill in (("lower", -np.inf), ("upper", np.inf)):
            v = getattr(self, name)
            v = np.full(n, fill) if v is None else np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy()
            object.__setattr__(self, name, v)
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise NumericsError("NaN bound")
        for name in ("P", "q", "eq_lhs", "eq_rhs", "ineq_lhs", "ineq_rhs"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericsError(f"{name} contains non-finite entries")

    @property
    def n(self) -> int:
        return self.P.shape[0]

    def objective(self, x: NDArray[np.float64]) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def stacked_inequalities(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """All inequalities, bounds included, as a single ``G x <= h`` block."""
        n = self.n
        eye = np.eye(n)
        lo = np.isfinite(self.lower)
        hi = np.isfinite(self.upper)
        G = np.vstack([self.ineq_lhs, -eye[lo], eye[hi]])
        h = np.concatenate([self.ineq_rhs, -self.lower[lo], self.upper[hi]])
        return G, h

    def max_violation(self, x: NDArray[np.float64]) -> float:
        G, h = self.stacked_inequalities()
        viol = 0.0
        if G.shape[0]:
            viol = max(viol, float(np.max(G @ x - h)))
        if self.eq_lhs.shape[0]:
            viol = max(viol, float(np.max(np.abs(self.eq_lhs @ x - self.eq_rhs))))
        return max(viol, 0.0)


@dataclass(frozen=True)
class QpSolution:
    x: NDArray[np.float64]
    objective: float
    status: QpStatus
    kkt_residual: float
    iterations: int = 0
    eq_dual: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    ineq_dual: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


@dataclass
class _IpmResult:
    x: NDArray[np.float64]
    y: NDArray[np.float64]
    z: NDArray[np.float64]
    s: NDArray[np.float64]
    converged: bool
    iterations: int
    residual: float


def _kkt_residual(P, q, A, b, G, h, x, y, z, s) -> float:
    rd = P @ x + q + A.T @ y + G.T @ z
    parts = [np.max(np.abs(rd), initial=0.0)]
    if A.shape[0]:
        parts.append(np.max(np.abs(A @ x - b)))
    if G.shape[0]:
        parts.append(np.max(np.maximum(G @ x - h, 0.0)))
        # complementarity measured on the original constraints
        slack = np.maximum(h - G @ x, 0.0)
        parts.append(np.max(np.abs(slack * z)))
        parts.append(np.max(np.maximum(-z, 0.0)))
    return float(max(parts))


def _factor_kkt(H, A, reg: float):
    """Factor ``[H A'; A 0]`` and return a solver for right-hand sides.

    The quasi-definite regularization keeps the factorization stable when
    ``A`` is rank deficient; one refinement step recover the accuracy lost
    to the perturbation.
    """
    n, p = H.shape[0], A.shape[0]
    K = np.zeros((n + p, n + p))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    Kreg = K.copy()
    Kreg[np.arange(n), np.arange(n)] += reg
    Kreg[np.arange(n, n + p), np.arange(n, n + p)] -= reg
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(Kreg, check_finite=False)
    except (ValueError, np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        lu = None

    def solve(r1, r2):
        rhs = np.concatenate([r1, r2])
        if lu is None:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        else:
            sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
            sol = sol + scipy.linalg.lu_solve(lu, rhs - K @ sol, check_finite=False)
        return sol[:n], sol[n:]

    return solve


def _max_step(v: NDArray[np.float64], dv: NDArray[np.float64]) -> float:
    with np.errstate(divide="ignore"):
        steps = np.where(dv < 0, -v / dv, np.inf)
    return min(1.0, float(steps.min(initial=np.inf)))


def _ipm(P, q, A, b, G, h, tol: float, max_iter: int) -> _IpmResult:
    n, p, m = P.shape[0], A.shape[0], G.shape[0]
    scale = max(1.0, np.max(np.abs(P), initial=0.0), np.max(np.abs(q), initial=0.0))
    reg = 1e-11 * scale

    # Starting point: least-squares fit of the equalities and a centred slack.
    x, y = _factor_kkt(P + G.T @ G + np.eye(n) * 1e-8 * scale, A, reg)(-q + G.T @ h, b)
    if m:
        s = h - G @ x
        shift = max(1.0, -1.5 * float(s.min()))
        s = np.where(s < 1.0, np.maximum(s, 0.0) + shift, s)
        z = np.ones(m)
    else:
        s = np.zeros(0)
        z = np.zeros(0)

    bnorm = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    qnorm = 1.0 + np.max(np.abs(q), initial=0.0)
    it = 0
    converged = False
    best = None
    last_gain = 0
    for it in range(1, max_iter + 1):
        rd = P @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        rg = G @ x + s - h
        mu = float(s @ z) / m if m else 0.0
        rp_inf = max(np.max(np.abs(rp), initial=0.0), np.max(np.abs(rg), initial=0.0))
        rd_inf = np.max(np.abs(rd), initial=0.0)
        if not (np.isfinite(rp_inf) and np.isfinite(rd_inf) and np.isfinite(mu)):
            break
        merit = max(rp_inf, rd_inf, mu)
        if best is None or merit < best[0]:
            if best is None or merit < 0.5 * best[0]:
                last_gain = it
            best = (merit, x, y, z, s)
        elif it - last_gain > STALL_ITER:
            # round-off floor: no real progress for a while
            break
        if rp_inf <= tol * 0.1 * bnorm and rd_inf <= tol * 0.1 * qnorm and mu <= tol * 0.1:
            if _kkt_residual(P, q, A, b, G, h, x, y, z, s) <= tol:
                converged = True
                break

        with np.errstate(over="ignore", invalid="ignore"):
            w = z / s if m else np.zeros(0)
            if not np.all(np.isfinite(w)) or (m and w.max() > 1e150):
                break
            H = P + (G.T * w) @ G if m else P
        kkt_solve = _factor_kkt(H, A, reg)

        def direction(rc):
            # ds = -rg - G dx ; dz = (-rc + z*rg + z*G dx)/s
            r1 = -rd
            if m:
                r1 = r1 + G.T @ ((rc - z * rg) / s)
            dx, dy = kkt_solve(r1, -rp)
            if m:
                ds = -rg - G @ dx
                dz = (-rc - z * ds) / s
            else:
                ds = np.zeros(0)
                dz = np.zeros(0)
            return dx, dy, dz, ds

        # predictor
        rc = s * z
        dx, dy, dz, ds = direction(rc)
        if m:
            a_aff = min(_max_step(s, ds), _max_step(z, dz))
            mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            sigma = min(max(sigma, 0.0), 1.0)
            # corrector
            rc = s * z + ds * dz - sigma * mu
            dx, dy, dz, ds = direction(rc)
            alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        else:
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        if m:
            s = s + alpha * ds
            z = z + alpha * dz
            if s.min() <= 0.0 or z.min() <= 0.0:
                break
    if converged or best is None:
        res = _kkt_residual(P, q, A, b, G, h, x, y, z, s)
        return _IpmResult(x, y, z, s, converged, it, res)
    _, x, y, z, s = best
    res = _kkt_residual(P, q, A, b, G, h, x, y, z, s)
    return _IpmResult(x, y, z, s, res <= tol, it, res)


def _phase_one(A, b, G, h, tol: float, max_iter: int) -> float:
    """Smallest total constraint violation; zero iff the constraints are feasible.

    Solves ``min 1'(e+ + e-) + t`` s.t. ``A x + e+ - e- = b``,
    ``G x - t <= h``, ``e+, e-, t >= 0``.
    """
    n, p, m = G.shape[1] if G.size else A.shape[1], A.shape[0], G.shape[0]
    nv = n + 2 * p + 1
    c = np.concatenate([np.zeros(n), np.ones(2 * p), [1.0]])
    A1 = np.hstack([A, np.eye(p), -np.eye(p), np.zeros((p, 1))])
    G1 = np.vstack([
        np.hstack([G, np.zeros((m, 2 * p)), -np.ones((m, 1))]),
        np.hstack([np.zeros((2 * p + 1, n)), -np.eye(2 * p + 1)]),
    ])
    h1 = np.concatenate([h, np.zeros(2 * p + 1)])
    # a vanishing proximal term keeps the free x block nonsingular
    P1 = np.zeros((nv, nv))
    P1[:n, :n] = np.eye(n) * 1e-12
    r = _ipm(P1, c, A1, b, G1, h1, tol, max_iter)
    return float(c @ r.x)


def _has_descent_ray(P, q, A, G, tol: float, max_iter: int) -> bool:
    """Detect ``d`` with ``P d = 0, A d = 0, G d <= 0, q'd < 0`` in the unit box."""
    n = P.shape[0]
    Aeq = np.vstack([A, P]) if A.size else P
    beq = np.zeros(Aeq.shape[0])
    Gr = np.vstack([G, np.eye(n), -np.eye(n)]) if G.size else np.vstack([np.eye(n), -np.eye(n)])
    hr = np.concatenate([np.zeros(G.shape[0]), np.ones(2 * n)])
    r = _ipm(np.eye(n) * 1e-12, q, Aeq, beq, Gr, hr, tol, max_iter)
    return float(q @ r.x) < -max(tol, 1e-6) * (1.0 + np.max(np.abs(q), initial=0.0))


def solve_qp(problem: QpProblem, tol: float = FEAS_TOL, max_iter: int = MAX_QP_ITER) -> QpSolution:
    """Solve a convex QP with a Mehrotra predictor-corrector interior point method.

    Returns status ``Optimal`` when all KKT residuals (stationarity, primal
    feasibility and complementarity) are at most ``tol``. On failure a
    phase-one problem decides between ``Infeasible``, ``Unbounded`` and
    ``MaxIterations``.
    """
    P = repair_psd(problem.P)
    q = problem.q
    A, b = problem.eq_lhs, problem.eq_rhs
    G, h = problem.stacked_inequalities()
    n = problem.n

    r = _ipm(P, q, A, b, G, h, tol, max_iter)
    m = G.shape[0]
    if r.converged:
        x = r.x
        viol = problem.max_violation(x)
        return QpSolution(
            x=x,
            objective=problem.objective(x),
            status=QpStatus.OPTIMAL,
            kkt_residual=max(r.residual, viol),
            iterations=r.iterations,
            eq_dual=r.y,
            ineq_dual=r.z[: problem.ineq_lhs.shape[0]] if m else np.zeros(0),
        )

    violation = _phase_one(A, b, G, h, tol, max_iter) if (A.size or G.size) else 0.0
    if violation > tol:
        status = QpStatus.INFEASIBLE
    elif _has_descent_ray(P, q, A, G, tol, max_iter):
        status = QpStatus.UNBOUNDED
    else:
        status = QpStatus.MAX_ITERATIONS
    logger.debug("QP not solved (n=%d): %s after %d iterations, residual %.3g", n, status.value, r.iterations, r.residual)
    x = r.x if np.all(np.isfinite(r.x)) else np.zeros(n)
    return QpSolution(
        x=x,
        objective=problem.objective(x),
        status=status,
        kkt_residual=r.residual,
        iterations=r.iterations,
        eq_dual=r.y,
        ineq_dual=r.z[: problem.ineq_lhs.shape[0]] if m else np.zeros(0),
    )
