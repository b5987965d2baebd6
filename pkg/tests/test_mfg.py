import math

import numpy as np
import pytest
from fsmfg.core import TimeGrid, Trajectory
from fsmfg.cost import (QuadraticCost, coupling_affine, coupling_self,
                        psi_linear)
from oracles import shooting_oracle_d2

from fsmfg.mfg import (FixedPointError, StationaryTriple, apply_xi,
                       h_zero_bound, max_principle_slack, monotonicity_audit,
                       multistart_stationary, pvit_residual, solve_hj,
                       solve_kolmogorov, solve_mfg, solve_stationary,
                       stationary_residual, trend_experiment,
                       verify_value_by_simulation)


def constant_theta_traj(grid, theta):
    vals = np.tile(np.asarray(theta, dtype=float), (grid.M + 1, 1))
    return Trajectory(grid, vals, np.zeros_like(vals))


class TestSolveHJ:
    def test_zero_model_gives_zero(self, zero_model_d2, grid_unit):
        u = solve_hj(zero_model_d2, constant_theta_traj(grid_unit, [0.5, 0.5]))
        assert np.abs(u.values).max() == 0.0

    def test_symmetric_closed_form(self, quad_self_d2, grid_unit):
        # constant theta = (1/2, 1/2), psi = 0: u^i(t) = (1 - t)/2
        u = solve_hj(quad_self_d2, constant_theta_traj(grid_unit, [0.5, 0.5]))
        expect = 0.5 * (1.0 - grid_unit.nodes)
        assert np.abs(u.values - expect[:, None]).max() < 1e-12

    def test_max_principle_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            d = int(rng.integers(2, 4))
            A = rng.uniform(-1, 1, size=(d, d))
            b = rng.uniform(-1, 1, size=d)
            model = QuadraticCost(coupling_affine(A, b),
                                  terminal_cost=lambda th: th ** 2)
            grid = TimeGrid(float(rng.uniform(0.3, 1.5)), 400)
            B = rng.uniform(0, 1.5, size=(d, d))
            np.fill_diagonal(B, 0.0)
            np.fill_diagonal(B, -B.sum(axis=1))
            theta = solve_kolmogorov(model, lambda i, t: B[i],
                                     rng.dirichlet(np.ones(d)), grid)
            u = solve_hj(model, theta)
            M_hat = h_zero_bound(model, samples=2000, seed=1)
            assert max_principle_slack(u, M_hat) >= 0.0


class TestSolveKolmogorov:
    def test_zero_controls_constant(self, quad_self_d2, grid_unit):
        tr = solve_kolmogorov(quad_self_d2, lambda i, t: np.zeros(2),
                              [0.3, 0.7], grid_unit)
        assert np.abs(tr.values - np.array([0.3, 0.7])).max() < 1e-14

    def test_closed_form_exponential(self, quad_self_d2, grid_unit):
        rows = {0: np.array([0.0, 1.0]), 1: np.array([0.0, 0.0])}
        tr = solve_kolmogorov(quad_self_d2, lambda i, t: rows[i],
                              [1.0, 0.0], grid_unit)
        assert abs(tr.values[-1, 0] - math.exp(-1)) < 1e-9

    def test_mass_conserved(self, quad_self_d2, grid_unit):
        rng = np.random.default_rng(0)
        B = rng.uniform(0, 2, size=(2, 2))
        tr = solve_kolmogorov(quad_self_d2, lambda i, t: B[i],
                              [0.6, 0.4], grid_unit)
        assert np.abs(tr.values.sum(axis=1) - 1.0).max() <= 1e-10

    def test_rejects_negative_rates(self, quad_self_d2, grid_unit):
        with pytest.raises(ValueError):
            solve_kolmogorov(quad_self_d2, lambda i, t: np.array([-0.5, -0.5]),
                             [0.5, 0.5], grid_unit)


class TestSolveMfg:
    def test_trivial_fixed_point(self, zero_model_d2, grid_unit):
        sol = solve_mfg(zero_model_d2, [0.3, 0.7], grid_unit)
        assert sol.iterations <= 2
        assert np.abs(sol.theta.values - np.array([0.3, 0.7])).max() == 0.0
        assert np.abs(sol.u.values).max() == 0.0

    def test_symmetric_benchmark(self, quad_self_d2, grid_unit):
        sol = solve_mfg(quad_self_d2, [0.5, 0.5], grid_unit)
        assert np.abs(sol.theta.values - 0.5).max() < 1e-14
        expect = 0.5 * (1.0 - grid_unit.nodes)
        assert np.abs(sol.u.values - expect[:, None]).max() < 1e-12
        assert sol.residual <= 1e-8
        assert np.abs(sol.u.values[-1]
                      - quad_self_d2.psi(sol.theta.values[-1])).max() <= 1e-12

    def test_against_shooting_oracle(self, quad_self_d2):
        grid = TimeGrid(0.5, 1000)
        sol = solve_mfg(quad_self_d2, [0.9, 0.1], grid)
        theta_o, u_o = shooting_oracle_d2(quad_self_d2, [0.9, 0.1], grid)
        assert np.abs(sol.theta.values - theta_o).max() < 1e-5
        assert np.abs(sol.u.values - u_o).max() < 1e-5

    def test_mass_conserved(self, quad_self_d2, grid_unit):
        sol = solve_mfg(quad_self_d2, [0.8, 0.2], grid_unit)
        assert np.abs(sol.theta.values.sum(axis=1) - 1.0).max() <= 1e-10

    def test_theta0_exact(self, quad_self_d2, grid_unit):
        sol = solve_mfg(quad_self_d2, [0.8, 0.2], grid_unit)
        assert np.array_equal(sol.theta.values[0],
                              np.asarray([0.8, 0.2]))

    def test_fixed_point_consistency(self, quad_self_d2):
        # at default damping 1/2 one more xi application moves theta <= 2 tol
        grid = TimeGrid(0.5, 500)
        tol = 1e-9
        sol = solve_mfg(quad_self_d2, [0.7, 0.3], grid, tol=tol)
        xi, _ = apply_xi(quad_self_d2, sol.theta, grid)
        assert np.abs(xi.values - sol.theta.values).max() <= 2 * tol

    def test_small_T_uniqueness_random_initials(self, quad_self_d2):
        grid = TimeGrid(0.4, 300)
        tol = 1e-10
        rng = np.random.default_rng(6)
        base = solve_mfg(quad_self_d2, [0.6, 0.4], grid, tol=tol)
        for _ in range(10):
            init = rng.dirichlet([1, 1], size=grid.M + 1)
            sol = solve_mfg(quad_self_d2, [0.6, 0.4], grid, tol=tol, initial=init)
            assert np.abs(sol.theta.values - base.theta.values).max() <= 10 * tol
            assert np.abs(sol.u.values - base.u.values).max() <= 10 * tol

    def test_nonconvergence_reports_gaps(self, quad_self_d2):
        grid = TimeGrid(8.0, 100)
        with pytest.raises(FixedPointError) as exc:
            solve_mfg(quad_self_d2, [0.9, 0.1], grid, damping=0.5, max_iter=20)
        assert len(exc.value.gaps) == 20

    def test_residual_recomputable(self, quad_self_d2):
        grid = TimeGrid(0.5, 400)
        sol = solve_mfg(quad_self_d2, [0.8, 0.2], grid)
        assert pvit_residual(quad_self_d2, sol.theta, sol.u) == sol.residual


class TestVerification:
    def test_zero_model_zero_cost(self, zero_model_d2):
        grid = TimeGrid(1.0, 200)
        sol = solve_mfg(zero_model_d2, [0.5, 0.5], grid)
        rep = verify_value_by_simulation(zero_model_d2, sol, paths=100, seed=0,
                                         perturb=(0, 1, 0.0))
        assert rep.mc_mean == 0.0 and rep.mc_half_width == 0.0

    def test_symmetric_value_exact(self, quad_self_d2):
        grid = TimeGrid(1.0, 400)
        sol = solve_mfg(quad_self_d2, [0.5, 0.5], grid)
        rep = verify_value_by_simulation(quad_self_d2, sol, paths=300, seed=1)
        assert rep.value == pytest.approx(0.5, abs=1e-12)
        assert rep.mc_mean == pytest.approx(0.5, abs=1e-12)
        assert rep.perturbed_costlier

    def test_asymmetric_in_ci_and_gap(self, quad_self_d2):
        grid = TimeGrid(1.0, 500)
        sol = solve_mfg(quad_self_d2, [0.8, 0.2], grid)
        rep = verify_value_by_simulation(quad_self_d2, sol, paths=4000, seed=2)
        assert rep.value_in_ci
        assert rep.perturbed_costlier


class TestStationary:
    def test_symmetric_d2(self, quad_self_d2):
        tr = solve_stationary(quad_self_d2)
        assert np.abs(tr.theta_bar - 0.5).max() < 1e-9
        assert np.abs(tr.u_bar).max() < 1e-9
        assert tr.kappa == pytest.approx(0.5, abs=1e-9)
        assert tr.residual <= 1e-8

    def test_symmetric_d3(self):
        model = QuadraticCost(coupling_self(3))
        tr = solve_stationary(model)
        assert np.abs(tr.theta_bar - 1.0 / 3).max() < 1e-8
        assert tr.kappa == pytest.approx(1.0 / 3, abs=1e-8)

    def test_weighted_coupling(self):
        # f = diag(2, 1) theta forces theta_bar = (1/3, 2/3), kappa = 2/3
        model = QuadraticCost(coupling_affine(np.diag([2.0, 1.0])))
        tr = solve_stationary(model)
        assert np.abs(tr.theta_bar - [1 / 3, 2 / 3]).max() < 1e-8
        assert tr.kappa == pytest.approx(2 / 3, abs=1e-8)
        assert np.abs(tr.u_bar).max() < 1e-8

    def test_multistart_agreement(self):
        model = QuadraticCost(coupling_affine(np.diag([2.0, 1.0])))
        triples, spread = multistart_stationary(model, n_starts=10, seed=0)
        assert len(triples) == 10
        assert spread <= 1e-7

    def test_residual_definition(self, quad_self_d2):
        bad = StationaryTriple(np.array([0.6, 0.4]), np.array([0.1, 0.0]), 0.3)
        assert stationary_residual(quad_self_d2, bad) > 1e-2


class TestTrend:
    def test_start_at_stationary_stays(self, quad_self_d2):
        st = solve_stationary(quad_self_d2)
        res = trend_experiment(quad_self_d2, st.theta_bar, [0.5, 1.0], M=300,
                               stationary=st)
        assert max(res.theta_gaps) < 1e-7
        assert max(res.u_gaps) < 1e-7

    def test_decay_positive_short_list(self, quad_self_d2):
        res = trend_experiment(quad_self_d2, [0.9, 0.1], [0.5, 1.0, 2.0], M=400)
        assert res.theta_rate > 0
        assert res.u_rate > 0
        assert res.theta_gaps[1] <= res.theta_gaps[0]
        assert res.u_gaps[2] <= res.u_gaps[1]

    def test_cauchy_style_convergence(self, quad_self_d2):
        # doubling T beyond the largest entry moves the midpoint by less
        # than the previous gap to the stationary point
        res = trend_experiment(quad_self_d2, [0.9, 0.1], [1.0, 2.0], M=400)
        grid = TimeGrid(8.0, 400)
        sol = None
        dmp = 0.5
        while sol is None:
            try:
                sol = solve_mfg(quad_self_d2, [0.9, 0.1], grid, damping=dmp,
                                max_iter=2000)
            except FixedPointError:
                dmp *= 0.5
        mid_doubled = sol.theta.values[grid.M // 2]
        prev = trend_experiment(quad_self_d2, [0.9, 0.1], [2.0], M=400,
                                stationary=res.stationary)
        # recompute the T=2 midpoint from its own solve
        grid2 = TimeGrid(4.0, 400)
        sol2 = None
        dmp = 0.5
        while sol2 is None:
            try:
                sol2 = solve_mfg(quad_self_d2, [0.9, 0.1], grid2, damping=dmp,
                                 max_iter=2000)
            except FixedPointError:
                dmp *= 0.5
        mid_prev = sol2.theta.values[grid2.M // 2]
        change = np.abs(mid_doubled - mid_prev).max()
        assert change < prev.theta_gaps[-1]


class TestMonotonicityAudit:
    def test_constant_psi_zero_slack(self, quad_self_d2):
        rep = monotonicity_audit(quad_self_d2, samples=100, seed=0)
        assert rep.psi_worst == 0.0  # psi = 0 pairs to exactly zero

    def test_self_coupling_gamma_one(self, quad_self_d2):
        rep = monotonicity_audit(quad_self_d2, samples=200, seed=1)
        assert rep.monot_worst <= 1e-12
        assert rep.gamma == pytest.approx(1.0, abs=1e-9)

    def test_concavity_slack_nonpositive(self, quad_self_d2):
        rep = monotonicity_audit(quad_self_d2, samples=200, seed=2)
        assert rep.concavity_worst <= 1e-10
        assert rep.ok()

    def test_monotone_psi(self):
        model = QuadraticCost(coupling_self(2), terminal_cost=psi_linear(2))
        rep = monotonicity_audit(model, samples=200, seed=3)
        assert rep.psi_worst >= 0.0
