"""
Unit tests for the QP and NLP solvers
"""
import itertools
import unittest
import sys
from pathlib import Path

import numpy as np

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from sketchwrap.optim import (
    NlpProblem,
    QpProblem,
    SolveStatus,
    check_gradient,
    solve_nlp,
    solve_qp,
)


def active_set_optimum(H, g, G, h):
    """Best feasible KKT point over every active set of G x <= h."""
    n, m = len(g), len(h)
    best = np.inf
    for size in range(0, min(n, m) + 1):
        for active in itertools.combinations(range(m), size):
            rows = list(active)
            kkt = np.zeros((n + size, n + size))
            kkt[:n, :n] = H
            kkt[:n, n:] = G[rows].T
            kkt[n:, :n] = G[rows]
            rhs = np.concatenate([-g, h[rows]])
            try:
                x = np.linalg.solve(kkt, rhs)[:n]
            except np.linalg.LinAlgError:
                continue
            if np.all(G @ x <= h + 1e-9):
                best = min(best, 0.5 * x @ H @ x + g @ x)
    return best


def rosenbrock(x):
    a, b = x
    value = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    grad = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return value, grad


class TestSolveQp(unittest.TestCase):
    """Test cases for solve_qp."""

    def test_matches_active_set_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(60):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 7))
            M = rng.normal(size=(n, n))
            H = M @ M.T + 0.5 * np.eye(n)
            g = rng.normal(size=n) * 3
            G = rng.normal(size=(m, n))
            h = G @ rng.normal(size=n) + rng.uniform(0.1, 1.0, size=m)

            x, report = solve_qp(QpProblem(H, g, G, np.full(m, -np.inf), h))
            expected = active_set_optimum(H, g, G, h)
            self.assertEqual(report.status, SolveStatus.CONVERGED)
            self.assertAlmostEqual(report.objective, expected, delta=1e-5 * max(1.0, abs(expected)))

    def test_active_lower_bound(self):
        x, report = solve_qp(QpProblem(np.array([[2.0]]), np.zeros(1), np.eye(1), np.array([1.0]), np.array([np.inf])))
        self.assertAlmostEqual(float(x[0]), 1.0, delta=1e-6)
        self.assertTrue(report.converged)

    def test_projection_onto_box(self):
        x, _ = solve_qp(QpProblem(np.eye(2), np.zeros(2), np.eye(2), np.array([1.0, -5.0]), np.array([2.0, -3.0])))
        np.testing.assert_allclose(x, [1.0, -3.0], atol=1e-6)

    def test_unconstrained(self):
        H = np.array([[2.0, 0.0], [0.0, 4.0]])
        g = np.array([-2.0, -4.0])
        x, report = solve_qp(QpProblem(H, g, np.zeros((0, 2)), np.zeros(0), np.zeros(0)))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-6)
        self.assertTrue(report.converged)

    def test_box_bound_active(self):
        x, report = solve_qp(QpProblem(np.eye(1), np.array([-5.0]), np.eye(1), np.array([0.0]), np.array([2.0])))
        self.assertAlmostEqual(float(x[0]), 2.0, delta=1e-6)
        self.assertGreater(float(report.multipliers[0]), 0.0)

    def test_infeasible(self):
        A = np.array([[1.0], [1.0]])
        _, report = solve_qp(QpProblem(np.eye(1), np.zeros(1), A, np.array([-np.inf, 1.0]), np.array([-1.0, np.inf])))
        self.assertEqual(report.status, SolveStatus.INFEASIBLE)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        M = rng.normal(size=(4, 4))
        problem = QpProblem(M @ M.T + np.eye(4), rng.normal(size=4), rng.normal(size=(3, 4)), -np.ones(3), np.ones(3))
        x1, r1 = solve_qp(problem)
        x2, r2 = solve_qp(problem)
        self.assertTrue(np.array_equal(x1, x2))
        self.assertEqual(r1, r2)

    def test_invalid_problem(self):
        with self.assertRaises(ValueError):
            QpProblem(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.zeros(0))
        with self.assertRaises(ValueError):
            QpProblem(np.eye(1), np.zeros(1), np.eye(1), np.array([1.0]), np.array([0.0]))


class TestSolveNlp(unittest.TestCase):
    """Test cases for solve_nlp."""

    def test_rosenbrock(self):
        x, report = solve_nlp(NlpProblem(2, rosenbrock), np.array([-1.2, 1.0]))
        np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-3)
        self.assertEqual(report.status, SolveStatus.CONVERGED)

    def test_inequality_constrained(self):
        def objective(x):
            return float((x[0] - 2) ** 2 + (x[1] - 1) ** 2), np.array([2 * (x[0] - 2), 2 * (x[1] - 1)])

        def constraints(x):
            return np.array([x[0] + x[1] - 2.0]), np.array([[1.0, 1.0]])

        x, report = solve_nlp(NlpProblem(2, objective, constraints), np.zeros(2))
        np.testing.assert_allclose(x, [1.5, 0.5], atol=1e-3)
        self.assertTrue(report.converged)
        self.assertAlmostEqual(float(report.multipliers[0]), 1.0, delta=1e-2)

    def test_box_bounds(self):
        def objective(x):
            return float(np.sum((x - 3.0) ** 2)), 2 * (x - 3.0)

        problem = NlpProblem(3, objective, lower=np.zeros(3), upper=np.full(3, 1.0))
        x, report = solve_nlp(problem, np.full(3, 10.0))
        np.testing.assert_allclose(x, np.ones(3), atol=1e-6)
        self.assertTrue(report.converged)

    def test_infeasible_returns_best_iterate(self):
        def objective(x):
            return float(x[0] ** 2), np.array([2 * x[0]])

        def constraints(x):
            return np.array([1.0 - x[0]]), np.array([[-1.0]])

        problem = NlpProblem(1, objective, constraints, lower=np.array([-1.0]), upper=np.array([0.5]))
        x, report = solve_nlp(problem, np.zeros(1), max_outer=5)
        self.assertEqual(report.status, SolveStatus.MAX_ITER)
        self.assertAlmostEqual(float(x[0]), 0.5, delta=1e-6)
        self.assertAlmostEqual(report.primal_residual, 0.5, delta=1e-6)

    def test_active_inequality(self):
        def objective(x):
            return float((x[0] - 2) ** 2), np.array([2 * (x[0] - 2)])

        def constraints(x):
            return np.array([x[0] - 1.0]), np.array([[1.0]])

        x, report = solve_nlp(NlpProblem(1, objective, constraints), np.zeros(1))
        self.assertAlmostEqual(float(x[0]), 1.0, delta=1e-4)
        self.assertTrue(report.converged)

    def test_quadratic_gradient_check_is_tight(self):
        def objective(x):
            return float(x @ x + 3 * x[0]), 2 * x + np.array([3.0, 0.0])

        self.assertLessEqual(check_gradient(NlpProblem(2, objective), np.array([0.4, -1.3])), 1e-7)

    def test_corrupted_gradient_detected(self):
        def corrupted(x):
            value, grad = rosenbrock(x)
            grad = grad.copy()
            grad[1] *= 2.0
            return value, grad

        self.assertGreater(check_gradient(NlpProblem(2, corrupted), np.array([0.3, -0.7])), 0.1)

    def test_check_gradient(self):
        self.assertLess(check_gradient(NlpProblem(2, rosenbrock), np.array([0.3, -0.7])), 1e-6)

        def wrong(x):
            value, grad = rosenbrock(x)
            return value, grad + 1.0

        self.assertGreater(check_gradient(NlpProblem(2, wrong), np.array([0.3, -0.7])), 1e-3)


if __name__ == '__main__':
    unittest.main()
