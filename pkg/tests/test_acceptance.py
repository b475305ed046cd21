"""The nine acceptance criteria, each reported as one PASS/FAIL line."""

import itertools
import time

import numpy as np

from mppfolio.backtest import (
    Schedule,
    StrategyKind,
    StrategySpec,
    forecast_panel,
    r2_oos,
    run_backtest,
    sharpe_ratio,
    timing_weight,
)
from mppfolio.data import generate_synthetic
from mppfolio.models import ModelSpec, fit_elastic_net, fit_random_forest, fit_regression_tree, fit_svr
from mppfolio.models.forest import sse
from mppfolio.mpp import ConstraintSet, ErrorPanel, nla_solve, unconstrained_mpp
from mppfolio.numerics import QpProblem, QpStatus, sample_covariance, solve_qp

from conftest import grid_min_ratio, leak_check, nla_instance, random_feasible_qp, simplex_grid


def feasible_samples(rng, prob: QpProblem, x0, k: int = 2000):
    """Rejection samples from the feasible set, drawn on the equality-constrained affine hull."""
    n = x0.size
    if prob.eq_lhs.shape[0]:
        _, s, vt = np.linalg.svd(prob.eq_lhs)
        rank = int(np.sum(s > 1e-10 * s.max()))
        basis = vt[rank:].T
    else:
        basis = np.eye(n)
    pts = x0 + rng.uniform(-2.0, 2.0, (k, basis.shape[1])) @ basis.T
    ok = np.all(pts >= prob.lower - 1e-12, axis=1) & np.all(pts <= prob.upper + 1e-12, axis=1)
    if prob.ineq_lhs.shape[0]:
        ok &= np.all(pts @ prob.ineq_lhs.T <= prob.ineq_rhs + 1e-12, axis=1)
    return np.vstack([x0, pts[ok]])


def test_1_qp_correctness(report):
    elapsed, worst_kkt, beaten, n_points = 0.0, 0.0, 0, 0
    for s in range(50):
        rng = np.random.default_rng(1000 + s)
        n = int(rng.integers(1, 21))
        P, q, A, b, G, h, lo, hi, x0 = random_feasible_qp(rng, n)
        prob = QpProblem(P, q, A, b, G, h, lo, hi)
        t0 = time.perf_counter()
        sol = solve_qp(prob)
        elapsed += time.perf_counter() - t0
        assert sol.status is QpStatus.OPTIMAL
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        pts = feasible_samples(rng, prob, x0)
        n_points += len(pts)
        objs = 0.5 * np.einsum("ij,jk,ik->i", pts, P, pts) + pts @ q
        beaten += int(np.any(objs < sol.objective - 1e-9 * max(1.0, abs(sol.objective))))
    ok = worst_kkt <= 1e-8 and beaten == 0 and elapsed < 1.0
    report(1, ok, f"max KKT {worst_kkt:.2e}, {beaten} beaten by {n_points} samples, {elapsed:.3f}s")
    assert ok


def test_2_nla_matches_grid_search(report):
    worst_gap, slowest = -np.inf, 0.0
    for s in range(20):
        n = 2 + s % 2
        E, R = nla_instance(200 + s, n)
        mu = (R - E).mean(axis=0)
        cs = ConstraintSet(np.ones(n), mu, required_return=-0.1)
        t0 = time.perf_counter()
        sol = nla_solve(ErrorPanel(E, R), cs)
        slowest = max(slowest, time.perf_counter() - t0)
        # the return floor is inactive on the grid here, but check it anyway
        assert np.all(simplex_grid(n) @ mu >= -0.1)
        worst_gap = max(worst_gap, sol.objective_ratio - grid_min_ratio(E, R))
    ok = worst_gap <= 1e-3 and slowest < 0.1
    report(2, ok, f"worst ratio minus grid minimum {worst_gap:.2e}, slowest solve {1000 * slowest:.1f} ms")
    assert ok


def test_3_unconstrained_consistency(report):
    checked, worst = 0, 0.0
    for s in itertools.count():
        n = 2 + s % 4
        E, R = nla_instance(5000 + s, n)
        s0 = R.T @ R
        eig = unconstrained_mpp(s0 - E.T @ E, s0)
        if not (eig.normalized and np.all(eig.weights >= 0)):
            continue
        sol = nla_solve(ErrorPanel(E, R), ConstraintSet(np.ones(n), np.zeros(n)))
        worst = max(worst, abs(sol.r_squared - eig.r_squared))
        checked += 1
        if checked == 20:
            break
    ok = worst <= 1e-4
    report(3, ok, f"{checked} feasible eigen instances, max |R2 gap| {worst:.2e}")
    assert ok


def test_4_synthetic_ground_truth_recovery(report):
    t0 = time.perf_counter()
    panel, truth = generate_synthetic(10, 3, 2000, seed=0)
    X = panel.features[:, 0, :]
    preds = np.column_stack([fit_elastic_net(X, panel.returns[:, i], lam=0.0, tol=1e-12).predict(X)
                             for i in range(panel.n)])
    w = unconstrained_mpp(sample_covariance(preds), sample_covariance(panel.returns)).weights
    achieved = float(w @ truth.sigma_hat0 @ w / (w @ truth.sigma0 @ w))
    best = unconstrained_mpp(truth.sigma_hat0, truth.sigma0).r_squared
    elapsed = time.perf_counter() - t0
    ok = best - achieved <= 0.05 and elapsed < 30.0
    report(4, ok, f"population R2 {achieved:.4f} vs maximum {best:.4f}, {elapsed:.2f}s")
    assert ok


def test_5_model_oracles(report):
    checks = {}
    X = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 3.0], [5.0, 6.0]])
    y = np.array([1.2, 0.9, 3.1, 2.2, 4.0])
    Xc, yc = X - X.mean(0), y - y.mean()
    ols = fit_elastic_net(X, y, lam=0.0, tol=1e-12)
    checks["ols"] = np.allclose(ols.coefficients, np.linalg.solve(Xc.T @ Xc, Xc.T @ yc), atol=1e-6)
    ridge = fit_elastic_net(X, y, lam=1.0, alpha=0.0, tol=1e-12)
    # (1/N) RSS + lam/2 |b|^2 gives (Xc'Xc + N lam / 2 I) b = Xc'yc
    checks["ridge"] = np.allclose(ridge.coefficients, np.linalg.solve(Xc.T @ Xc + 2.5 * np.eye(2), Xc.T @ yc),
                                  atol=1e-6)

    Xt = np.array(list(itertools.product([-1.0, 1.0], repeat=3)))
    yt = (Xt[:, 0] > 0).astype(float)
    candidates = [(j, t, sse(yt[Xt[:, j] <= t]) + sse(yt[Xt[:, j] > t]))
                  for j in range(3) for v in [np.unique(Xt[:, j])] for t in (v[:-1] + v[1:]) / 2]
    best = min(candidates, key=lambda c: c[2])
    tree = fit_regression_tree(Xt, yt, m_try=3)
    checks["tree"] = (tree.n_splits == 1 and (tree.feature[0], tree.threshold[0]) == best[:2]
                      and sorted(tree.value[tree.feature < 0]) == [0.0, 1.0])

    rng = np.random.default_rng(0)
    Xf, probes = rng.standard_normal((80, 3)), rng.standard_normal((100, 3))
    yf = Xf[:, 0] + rng.normal(0, 0.1, 80)
    a = fit_random_forest(Xf, yf, B=20, m_try=2, base_seed=7).predict(probes)
    b = fit_random_forest(Xf, yf, B=20, m_try=2, base_seed=7).predict(probes)
    checks["forest"] = np.array_equal(a, b)

    xs = np.linspace(0.0, 2.0 * np.pi, 10)[:, None]
    ys = np.sin(xs[:, 0])
    svr = fit_svr(xs, ys, cost=3.0, gamma=0.1, epsilon_tube=0.1)
    beta = np.zeros(10)
    for c, sv in zip(svr.support_coefficients, svr.training_points):
        beta[np.flatnonzero((xs == sv).all(1))] = c
    resid = np.abs(ys - svr.predict(xs))
    checks["svr"] = (np.allclose(np.abs(beta[resid > 0.1 + 1e-6]), 3.0, atol=1e-6)
                     and np.all(beta[resid < 0.1 - 1e-6] == 0.0))
    ok = all(checks.values())
    report(5, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in checks.items()))
    assert ok


def test_6_mpp_beats_equal_weight_predictability(report):
    t0 = time.perf_counter()
    panel, _ = generate_synthetic(50, 3, 360, seed=0)
    schedule = Schedule.proportional(panel.T)
    res = run_backtest(panel, ModelSpec("ols"), StrategySpec("Mpp", weight_cap=0.1), schedule)
    mpp, ew = float(np.mean(res.in_sample_r2)), float(np.mean(res.equal_weight_r2))
    elapsed = time.perf_counter() - t0
    ok = mpp - ew >= 0.02 and elapsed < 300.0
    report(6, ok, f"average R2 MPP {mpp:.4f} vs equal weight {ew:.4f}, {len(res.months)} months, {elapsed:.1f}s")
    assert ok


def test_7_timing_identity_and_arithmetic(report):
    panel, _ = generate_synthetic(12, 3, 100, seed=11, feature_mode="exposures")
    sched = Schedule(0, 40, 40, 60, 60, 100, covariance_window=24, error_window=24)
    fc = forecast_panel(panel, ModelSpec("ols"), sched, with_vol=True)
    base = run_backtest(panel, "ols", StrategySpec("Mpp"), sched, forecasts=fc)
    timed = run_backtest(panel, "ols", StrategySpec("MppTiming", timing_clamp=(1.0, 1.0)), sched, forecasts=fc)
    identical = np.array_equal(base.monthly_returns, timed.monthly_returns)
    value = timing_weight(0.02, 0.0025, 4.0)
    ok = identical and value == 2.0
    report(7, ok, f"clamp [1,1] series identical: {identical}; (0.02, 0.0025, 4) -> {value!r}")
    assert ok


def test_8_metric_cross_checks(report):
    r2 = r2_oos([0.1, -0.1], [0.05, 0.0])
    sharpe = sharpe_ratio(10.46, 2.6, 14.6)
    ok = abs(r2 - 0.375) <= 1e-15 and round(sharpe, 2) == 0.54
    report(8, ok, f"R2_oos {r2!r}, Sharpe {sharpe:.4f}")
    assert ok


def test_9_causality_for_every_strategy_kind(report):
    panel, _ = generate_synthetic(20, 3, 100, seed=5, feature_mode="exposures")
    sched = Schedule(0, 40, 40, 60, 60, 100, covariance_window=24, error_window=24)
    result = leak_check(panel, sched, [StrategySpec(k) for k in StrategyKind], cut=75)
    failed = [k for k, v in result.items() if not v]
    ok = not failed and len(result) == 14
    report(9, ok, f"{len(result) - len(failed)}/{len(result)} strategy kinds leak-free" +
           (f"; leaking: {failed}" if failed else ""))
    assert ok
