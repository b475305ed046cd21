import numpy as np
import pytest

from mppfolio.backtest import Schedule
from mppfolio.data import generate_synthetic


def random_feasible_qp(rng: np.random.Generator, n: int):
    """Random convex QP with a known strictly feasible point ``x0``."""
    L = rng.standard_normal((n, n))
    P = L @ L.T + 1e-3 * np.eye(n)
    q = rng.standard_normal(n)
    x0 = rng.uniform(-1.0, 1.0, n)
    p_eq = int(rng.integers(0, max(1, n // 3) + 1))
    A = rng.standard_normal((p_eq, n))
    b = A @ x0
    m = int(rng.integers(1, n + 1))
    G = rng.standard_normal((m, n))
    h = G @ x0 + rng.uniform(0.1, 1.0, m)
    lo = x0 - rng.uniform(0.5, 2.0, n)
    hi = x0 + rng.uniform(0.5, 2.0, n)
    return P, q, A, b, G, h, lo, hi, x0


def simplex_grid(n: int, step: float = 0.01):
    """Every point of the probability simplex on a ``step`` lattice."""
    k = int(round(1.0 / step))
    if n == 2:
        a = np.arange(k + 1)
        return np.stack([a, k - a], axis=1) / k
    pts = [(i, j, k - i - j) for i in range(k + 1) for j in range(k + 1 - i)]
    return np.asarray(pts, float) / k


def grid_min_ratio(E, R, step: float = 0.01) -> float:
    W = simplex_grid(E.shape[1], step)
    num = ((W @ E.T) ** 2).sum(axis=1)
    den = ((W @ R.T) ** 2).sum(axis=1)
    return float(np.min(num / den))


def nla_instance(seed: int, n: int, T: int = 24):
    """Random forecast-error panel: predictable share varies by asset."""
    rng = np.random.default_rng(seed)
    R = rng.normal(0.0, 0.05, (T, n))
    Q = R * rng.uniform(0.0, 0.8, n) + rng.normal(0.0, 0.02, (T, n))
    return R - Q, R


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def emit(number: int, ok: bool, detail: str) -> bool:
        line = f"acceptance {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        print(line)
        lines.append(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_panel():
    panel, truth = generate_synthetic(12, 3, 100, seed=11, feature_mode="exposures")
    return panel, truth


@pytest.fixture(scope="session")
def small_schedule():
    return Schedule(0, 40, 40, 60, 60, 100, refit_interval=12, covariance_window=24, error_window=24)


def perturb_after(panel, cut: int, seed: int = 0):
    """Copy of ``panel`` with everything not knowable before month ``cut`` randomized.

    Returns, the risk-free rate and the benchmark change from ``cut`` on;
    features change from ``cut + 1`` on, since ``features[t]`` holds data up
    to ``t - 1``.
    """
    rng = np.random.default_rng(seed)
    r = panel.returns.copy()
    r[cut:] += rng.normal(0.0, 0.05, r[cut:].shape)
    f = panel.features.copy()
    f[cut + 1:] += rng.normal(0.0, 1.0, f[cut + 1:].shape)
    rf = panel.risk_free.copy()
    rf[cut:] += rng.uniform(0.0, 0.01, rf[cut:].shape)
    bench = panel.benchmark.copy()
    bench[cut:] += rng.normal(0.0, 0.05, bench[cut:].shape)
    return panel.replace(returns=r, features=f, risk_free=rf, benchmark=bench)


def leak_check(panel, schedule, strategies, cut: int, model="ols", seed: int = 0) -> dict:
    """For each strategy, whether weights up to ``cut`` survive a mutation of later data.

    Forecasts are recomputed on each panel, so the check covers model
    fitting as well as portfolio construction.
    """
    from mppfolio.backtest import forecast_panel, run_backtest
    from mppfolio.models import ModelSpec

    spec = ModelSpec(model)
    shocked = perturb_after(panel, cut, seed)
    fc_a = forecast_panel(panel, spec, schedule, with_vol=True)
    fc_b = forecast_panel(shocked, spec, schedule, with_vol=True)
    j = cut - schedule.holdout_start + 1
    out = {}
    for strat in strategies:
        a = run_backtest(panel, spec, strat, schedule, forecasts=fc_a)
        b = run_backtest(shocked, spec, strat, schedule, forecasts=fc_b)
        same = np.array_equal(a.monthly_weights[:j], b.monthly_weights[:j])
        if not a.has_weights:
            # pass-through strategies: realized returns before the cut must match
            same = np.array_equal(a.monthly_returns[: j - 1], b.monthly_returns[: j - 1])
        # the mutation must actually reach the later months
        moved = not np.array_equal(a.monthly_returns[j:], b.monthly_returns[j:])
        out[strat.label()] = same and moved
    return out
