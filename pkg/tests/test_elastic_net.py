import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mppfolio.models import ElasticNetModel, fit_elastic_net, lambda_grid, predict_elastic_net
from mppfolio.models.elastic_net import elastic_net_objective

X5 = np.array([[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 3.0], [5.0, 6.0]])
Y5 = np.array([1.2, 0.9, 3.1, 2.2, 4.0])

# Frozen from exact rational arithmetic on the centered normal equations.
OLS_BETA = (307 / 1800, 187 / 360)
OLS_INTERCEPT = 1 / 450
# Ridge with lam=1, alpha=0: (Xc'Xc + (N*lam/2) I) beta = Xc'yc, N = 5.
RIDGE_BETA = (2953 / 14625, 256 / 585)
RIDGE_INTERCEPT = 2726 / 14625


def test_least_squares_matches_normal_equations():
    model = fit_elastic_net(X5, Y5, lam=0.0, tol=1e-12)
    assert np.allclose(model.coefficients, OLS_BETA, atol=1e-6)
    assert model.intercept == pytest.approx(OLS_INTERCEPT, abs=1e-6)
    # cross-check with an independent solver
    A = np.column_stack([np.ones(5), X5])
    coef = np.linalg.lstsq(A, Y5, rcond=None)[0]
    assert np.allclose(coef, [OLS_INTERCEPT, *OLS_BETA], atol=1e-12)


def test_ridge_matches_closed_form():
    model = fit_elastic_net(X5, Y5, lam=1.0, alpha=0.0, tol=1e-12)
    assert np.allclose(model.coefficients, RIDGE_BETA, atol=1e-6)
    assert model.intercept == pytest.approx(RIDGE_INTERCEPT, abs=1e-6)


def test_total_shrinkage():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 4))
    X = (X - X.mean(0)) / X.std(0)
    y = X @ [1.0, -0.5, 0.2, 0.0] + rng.normal(0, 0.1, 40)
    model = fit_elastic_net(X, y, lam=1e6, alpha=1.0)
    assert np.all(model.coefficients == 0.0)
    assert model.intercept == pytest.approx(y.mean())


def test_prediction_hand_values():
    zero = ElasticNetModel(0.7, np.zeros(2), 0.0, 1.0)
    assert predict_elastic_net(zero, [5.0, -3.0]) == 0.7
    assert predict_elastic_net(ElasticNetModel(0.0, np.array([1.0, -1.0]), 0.0, 1.0), [3.0, 2.0]) == 1.0
    with pytest.raises(ValueError):
        predict_elastic_net(zero, [1.0, 2.0, 3.0])


def test_prediction_is_affine():
    rng = np.random.default_rng(1)
    model = fit_elastic_net(rng.standard_normal((30, 3)), rng.standard_normal(30), lam=0.01, alpha=0.5)
    a, b = rng.standard_normal((2, 3))
    f0 = model.predict(np.zeros(3))
    assert model.predict(a + b) - f0 == pytest.approx((model.predict(a) - f0) + (model.predict(b) - f0))


def test_input_errors():
    with pytest.raises(ValueError):
        fit_elastic_net(X5[:1], Y5[:1], 0.1)
    with pytest.raises(ValueError):
        fit_elastic_net(np.where(X5 == 1.0, np.nan, X5), Y5, 0.1)
    with pytest.raises(ValueError):
        fit_elastic_net(X5, Y5, 0.1, tol=0.0)
    with pytest.raises(ValueError):
        fit_elastic_net(X5, Y5, -1.0)


def test_pooled_weights_equal_duplicated_rows():
    # weight 2 on a row is the same fit as duplicating that row
    w = np.array([2.0, 1.0, 1.0, 1.0, 1.0])
    a = fit_elastic_net(X5, Y5, lam=0.05, alpha=0.5, tol=1e-12, sample_weight=w)
    b = fit_elastic_net(np.vstack([X5, X5[:1]]), np.append(Y5, Y5[0]), lam=0.05, alpha=0.5, tol=1e-12)
    assert np.allclose(a.coefficients, b.coefficients, atol=1e-10)


def test_lambda_grid_endpoints():
    grid = lambda_grid()
    assert grid[0] == pytest.approx(1e-4) and grid[-1] == pytest.approx(10.0)
    assert all(a < b for a, b in zip(grid, grid[1:]))


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    lam=st.floats(1e-4, 10.0),
    alpha=st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]),
)
def test_objective_nonincreasing_across_sweeps(seed, lam, alpha):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((25, 5))
    y = X @ rng.standard_normal(5) + rng.standard_normal(25)
    model = fit_elastic_net(X, y, lam=lam, alpha=alpha)
    path = np.asarray(model.objective_path)
    assert np.all(np.diff(path) <= 1e-12 * np.abs(path[:-1]).max())
    # the tracked objective is the full one at the final point
    full = elastic_net_objective(X, y, model.intercept, model.coefficients, lam, alpha)
    assert full == pytest.approx(path[-1], rel=1e-9, abs=1e-12)


def test_lasso_path_support_shrinks():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((80, 8))
    X = (X - X.mean(0)) / X.std(0)
    y = X @ np.array([1.0, -0.8, 0.6, -0.4, 0.3, 0.2, 0.1, 0.05]) + rng.normal(0, 0.5, 80)
    counts = [np.count_nonzero(fit_elastic_net(X, y, lam, 1.0, tol=1e-10).coefficients)
              for lam in np.logspace(-4, 1, 20)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[0] == 8 and counts[-1] == 0
