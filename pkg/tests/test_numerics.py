import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mppfolio.numerics import (
    NumericsError,
    QpProblem,
    QpStatus,
    max_generalized_eigenpair,
    repair_psd,
    sample_covariance,
    solve_qp,
    symmetrize,
)

from conftest import random_feasible_qp


class TestLinearAlgebra:
    def test_symmetrize_is_exact(self):
        a = np.random.default_rng(0).standard_normal((5, 5))
        s = symmetrize(a)
        assert np.array_equal(s, s.T)

    def test_symmetrize_rejects_non_square(self):
        with pytest.raises(NumericsError):
            symmetrize(np.zeros((2, 3)))

    def test_repair_leaves_pd_matrix_untouched(self):
        p = np.array([[2.0, 0.5], [0.5, 1.0]])
        assert np.array_equal(repair_psd(p), p)

    def test_repair_clamps_negative_eigenvalue(self):
        p = np.diag([1.0, -1e-3])
        fixed = repair_psd(p)
        floor = 1e-10 * np.trace(p)
        assert np.linalg.eigvalsh(fixed).min() == pytest.approx(floor, rel=1e-3)
        assert np.linalg.eigvalsh(fixed).max() == pytest.approx(1.0)

    def test_sample_covariance_matches_hand_value(self):
        x = np.array([[1.0], [3.0]])
        # mean 2, deviations +-1, divided by T = 2
        assert sample_covariance(x)[0, 0] == pytest.approx(1.0)

    def test_sample_covariance_errors(self):
        with pytest.raises(NumericsError):
            sample_covariance(np.ones((1, 2)))
        with pytest.raises(NumericsError):
            sample_covariance(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestGeneralizedEigen:
    def test_diagonal_pencil(self):
        lam, v = max_generalized_eigenpair(np.diag([0.9, 0.1]), np.eye(2))
        assert lam == pytest.approx(0.9)
        assert np.allclose(v, [1.0, 0.0])

    def test_beats_random_directions(self):
        rng = np.random.default_rng(4)
        L = rng.standard_normal((4, 4))
        b = L @ L.T + np.eye(4)
        M = rng.standard_normal((4, 2))
        a = M @ M.T
        lam, v = max_generalized_eigenpair(a, b)
        d = rng.standard_normal((100_000, 4))
        rq = np.einsum("ij,jk,ik->i", d, a, d) / np.einsum("ij,jk,ik->i", d, b, d)
        assert lam >= rq.max() - 1e-12
        assert v @ b @ v == pytest.approx(1.0)

    def test_rejects_singular_b(self):
        with pytest.raises(NumericsError):
            max_generalized_eigenpair(np.eye(2), np.diag([1.0, 0.0]))


class TestSolveQp:
    def test_projection_onto_simplex_edge(self):
        # min ||x||^2 s.t. x1 + x2 = 1 -> (0.5, 0.5)
        sol = solve_qp(QpProblem(2 * np.eye(2), np.zeros(2), np.ones((1, 2)), np.ones(1)))
        assert sol.status is QpStatus.OPTIMAL
        assert np.allclose(sol.x, [0.5, 0.5], atol=1e-8)

    def test_two_asset_weighted(self):
        # min x^2 + 4 y^2 s.t. x + y = 1, x, y >= 0 -> (0.8, 0.2)
        sol = solve_qp(QpProblem(np.diag([2.0, 8.0]), np.zeros(2), np.ones((1, 2)), np.ones(1), lower=0.0))
        assert np.allclose(sol.x, [0.8, 0.2], atol=1e-8)
        assert sol.kkt_residual <= 1e-8

    def test_infeasible(self):
        sol = solve_qp(QpProblem(np.eye(1), np.zeros(1), lower=1.0, upper=0.0))
        assert sol.status is QpStatus.INFEASIBLE

    def test_unbounded(self):
        sol = solve_qp(QpProblem(np.zeros((1, 1)), np.array([-1.0]), lower=0.0))
        assert sol.status is QpStatus.UNBOUNDED

    def test_bad_shapes(self):
        with pytest.raises(NumericsError):
            QpProblem(np.eye(2), np.zeros(3))
        with pytest.raises(NumericsError):
            QpProblem(np.eye(2), np.zeros(2), np.ones((1, 3)), np.ones(1))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
    def test_random_feasible_qps_certify_optimality(self, seed, n):
        rng = np.random.default_rng(seed)
        P, q, A, b, G, h, lo, hi, x0 = random_feasible_qp(rng, n)
        prob = QpProblem(P, q, A, b, G, h, lo, hi)
        sol = solve_qp(prob)
        assert sol.status is QpStatus.OPTIMAL
        assert sol.kkt_residual <= 1e-8
        assert prob.max_violation(sol.x) <= 1e-8
        # known feasible point cannot beat the optimum
        assert sol.objective <= prob.objective(x0) + 1e-8
