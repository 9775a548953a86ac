import logging

import numpy as np
import pytest

from wdmatch.errors import InfeasibleProblemError, ValidationError
from wdmatch.qp import BoxEqQP, project_feasible, projected_gradient_oracle, solve_qp


def random_problem(seed, n=6, ridge=0.3):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    hess = a.T @ a / n + ridge * np.eye(n)
    lin = rng.standard_normal(n)
    lower = rng.uniform(-1.0, 0.0, n)
    upper = lower + rng.uniform(0.5, 2.0, n)
    target = float(rng.uniform(lower.sum(), upper.sum()))
    return BoxEqQP(hess, lin, lower, upper, target)


class TestProblemValidation:
    def test_asymmetric_hessian_rejected(self):
        h = np.array([[1.0, 0.5], [0.0, 1.0]])
        with pytest.raises(ValidationError):
            BoxEqQP(h, [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 1.0)

    def test_crossed_bounds_rejected(self):
        with pytest.raises(ValidationError):
            BoxEqQP(np.eye(2), [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], 1.0)

    def test_unreachable_sum_rejected(self):
        with pytest.raises(InfeasibleProblemError):
            BoxEqQP(np.eye(2), [0.0, 0.0], [0.0, 0.0], [1.0, 1.0], 3.0)

    def test_infeasible_start_rejected(self):
        problem = BoxEqQP(np.eye(2), [0.0, 0.0], [0.0, 0.0], [2.0, 2.0], 2.0)
        with pytest.raises(ValidationError):
            solve_qp(problem, start=np.array([2.0, 2.0]))


class TestKnownSolutions:
    def test_minimum_norm_point(self):
        problem = BoxEqQP(np.eye(2), np.zeros(2), [0.0, 0.0], [2.0, 2.0], 2.0)
        sol = solve_qp(problem)
        np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-10)
        assert sol.objective == pytest.approx(1.0, abs=1e-10)

    def test_linear_tilt(self):
        # Substituting x2 = 2 - x1 gives x1^2 - 3 x1 + 2, minimized at x1 = 1.5.
        problem = BoxEqQP(np.eye(2), [-1.0, 0.0], [0.0, 0.0], [2.0, 2.0], 2.0)
        sol = solve_qp(problem)
        np.testing.assert_allclose(sol.x, [1.5, 0.5], atol=1e-9)
        oracle = projected_gradient_oracle(problem, steps=4000)
        np.testing.assert_allclose(sol.x, oracle, atol=1e-6)

    def test_degenerate_box_pins_solution(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((2, 2))
        problem = BoxEqQP(a.T @ a, rng.standard_normal(2), [1.0, 1.0], [1.0, 1.0], 2.0)
        np.testing.assert_array_equal(solve_qp(problem).x, [1.0, 1.0])

    def test_lp_mass_concentrates_greedily(self):
        # With no quadratic part the optimum stacks delta-capped mass on the
        # cheapest coordinates, exactly like the greedy fill.
        rng = np.random.default_rng(17)
        n, delta = 7, 2.5
        lin = rng.random(n)
        problem = BoxEqQP(np.zeros((n, n)), lin, np.zeros(n), np.full(n, delta), float(n))
        sol = solve_qp(problem)
        greedy = np.zeros(n)
        mass = float(n)
        for i in np.argsort(lin):
            greedy[i] = min(delta, mass)
            mass -= greedy[i]
            if mass <= 0.0:
                break
        np.testing.assert_allclose(sol.x, greedy, atol=1e-9)

    def test_constant_objective_keeps_uniform_start(self):
        n = 5
        problem = BoxEqQP(np.zeros((n, n)), np.ones(n), np.zeros(n), np.full(n, 3.0), float(n))
        sol = solve_qp(problem, start=np.ones(n))
        np.testing.assert_array_equal(sol.x, np.ones(n))


class TestOracleAgreement:
    def test_random_instances(self):
        worst_x, worst_obj = 0.0, 0.0
        for seed in range(100):
            problem = random_problem(seed)
            sol = solve_qp(problem)
            oracle = projected_gradient_oracle(problem, steps=3000)
            worst_x = max(worst_x, float(np.linalg.norm(sol.x - oracle)))
            worst_obj = max(worst_obj, problem.objective(oracle) - sol.objective)
        assert worst_x <= 1e-5
        # The oracle can only sit above the optimum.
        assert worst_obj >= -1e-9

    def test_singular_hessian_objective_only(self):
        # Rank-1 Hessians leave the minimizer non-unique; compare objectives.
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            n = 5
            v = rng.standard_normal(n)
            problem = BoxEqQP(
                np.outer(v, v), rng.standard_normal(n), np.zeros(n),
                np.ones(n), float(rng.uniform(0.5, n - 0.5)),
            )
            sol = solve_qp(problem)
            oracle = projected_gradient_oracle(problem, steps=6000)
            assert sol.objective <= problem.objective(oracle) + 1e-8

    def test_zero_gradient_start_is_fixed_point(self):
        # The oracle starts at [1, 1]; the gradient vanishes there.
        problem = BoxEqQP(np.eye(2), [-1.0, -1.0], [0.0, 0.0], [2.0, 2.0], 2.0)
        np.testing.assert_array_equal(
            projected_gradient_oracle(problem, steps=50), [1.0, 1.0]
        )


class TestSolutionCertificates:
    def test_kkt_and_feasibility(self):
        for seed in range(40):
            problem = random_problem(seed, n=8)
            sol = solve_qp(problem)
            assert sol.kkt_residual <= 1e-6
            assert np.all(sol.x >= problem.lower - 1e-9)
            assert np.all(sol.x <= problem.upper + 1e-9)
            assert abs(sol.x.sum() - problem.eq_target) <= 1e-6 * problem.n

    def test_complementary_slackness(self):
        for seed in range(30):
            problem = random_problem(seed, n=6)
            sol = solve_qp(problem)
            grad = problem.hess @ sol.x + problem.lin
            interior = (sol.x > problem.lower + 1e-7) & (sol.x < problem.upper - 1e-7)
            if interior.sum() >= 2:
                lam = grad[interior].mean()
                assert np.max(np.abs(grad[interior] - lam)) <= 1e-6
                at_lower = sol.x <= problem.lower + 1e-9
                at_upper = sol.x >= problem.upper - 1e-9
                assert np.all(grad[at_lower] >= lam - 1e-6)
                assert np.all(grad[at_upper] <= lam + 1e-6)

    def test_beats_random_feasible_points(self):
        rng = np.random.default_rng(7)
        problem = random_problem(123, n=6)
        sol = solve_qp(problem)
        for _ in range(1000):
            z = rng.uniform(problem.lower, problem.upper)
            point = project_feasible(z, problem.lower, problem.upper, problem.eq_target)
            assert sol.objective <= problem.objective(point) + 1e-9

    def test_warm_start_never_worse_and_logged(self):
        problem = random_problem(55, n=8)
        cold = solve_qp(problem)
        warm = solve_qp(problem, start=cold.x)
        assert warm.objective <= cold.objective + 1e-9
        # Soft performance property: report, never assert.
        if warm.iterations > 2 * cold.iterations:
            logging.getLogger(__name__).warning(
                "warm start used %d iterations vs %d cold",
                warm.iterations, cold.iterations,
            )


class TestProjection:
    def test_matches_bruteforce_shift(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            lower = rng.uniform(-2.0, 0.0, n)
            upper = lower + rng.uniform(0.2, 2.0, n)
            target = float(rng.uniform(lower.sum(), upper.sum()))
            z = rng.uniform(-3.0, 3.0, n)
            x = project_feasible(z, lower, upper, target)
            assert abs(x.sum() - target) <= 1e-9
            assert np.all(x >= lower - 1e-12) and np.all(x <= upper + 1e-12)
            # Exhaustive check on the shift: no nu does strictly better.
            nus = np.linspace(np.min(z - upper) - 1.0, np.max(z - lower) + 1.0, 4001)
            cands = np.clip(z[None, :] - nus[:, None], lower, upper)
            feas = np.abs(cands.sum(axis=1) - target) <= 1e-3
            if feas.any():
                best = np.min(np.linalg.norm(cands[feas] - z, axis=1))
                assert np.linalg.norm(x - z) <= best + 1e-3
