import numpy as np
import pytest

from fsmfg.core import TimeGrid, Trajectory
from fsmfg.cost import QuadraticCost, coupling_affine, coupling_self
from fsmfg.mfg import solve_mfg, solve_stationary
from fsmfg.nplayer import loglog_slope, solve_equilibrium
from fsmfg.potential import (PlanningError, PotentialModel, action,
                             conservation_drift, criticality_probe,
                             hamilton_residuals, hamiltonian_H,
                             legendre_Fstar, master_field,
                             potential_from_affine, solve_planning)


@pytest.fixture
def pm_self_d2():
    return potential_from_affine(coupling_self(2))


class TestHamiltonian:
    def test_constant_u(self, pm_self_d2):
        th = np.array([0.3, 0.7])
        got = hamiltonian_H(pm_self_d2, np.array([2.0, 2.0]), th)
        assert got == pytest.approx(0.5 * float(th @ th), abs=1e-15)

    def test_closed_form_zero(self, pm_self_d2):
        # 1/2 (-1/2) + 1/2 * 0 + 1/4 = 0
        assert hamiltonian_H(pm_self_d2, np.array([1.0, 0.0]),
                             np.array([0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)

    def test_conserved_along_solution(self, pm_self_d2):
        grid = TimeGrid(1.0, 1000)
        sol = solve_mfg(pm_self_d2.base, [0.8, 0.2], grid, tol=1e-12)
        assert conservation_drift(pm_self_d2, sol) <= 1e-6

    def test_mass_conserved(self, pm_self_d2):
        grid = TimeGrid(1.0, 500)
        sol = solve_mfg(pm_self_d2.base, [0.7, 0.3], grid)
        assert np.abs(sol.theta.values.sum(axis=1) - 1.0).max() <= 1e-10

    def test_hamilton_equations_residual(self, pm_self_d2):
        grid = TimeGrid(1.0, 1000)
        sol = solve_mfg(pm_self_d2.base, [0.8, 0.2], grid, tol=1e-12)
        assert hamilton_residuals(pm_self_d2, sol) <= 1e-5

    def test_drift_scales_fourth_order(self, pm_self_d2):
        drifts = []
        for M in (16, 32, 64):
            sol = solve_mfg(pm_self_d2.base, [0.8, 0.2], TimeGrid(1.0, M),
                            tol=1e-13, max_iter=3000)
            drifts.append(conservation_drift(pm_self_d2, sol))
        assert 8.0 <= drifts[0] / drifts[1] <= 32.0
        assert 8.0 <= drifts[1] / drifts[2] <= 32.0

    def test_rejects_non_potential(self):
        base = QuadraticCost(coupling_self(2))
        with pytest.raises(ValueError):
            PotentialModel(base, lambda th: 0.0)


class TestLegendre:
    def test_quadratic_pair(self, pm_self_d2):
        rng = np.random.default_rng(2)
        for _ in range(10):
            q = rng.standard_normal(2)
            assert legendre_Fstar(pm_self_d2, q) == pytest.approx(
                0.5 * float(q @ q), abs=1e-12)

    def test_zero_argument(self, pm_self_d2):
        # F >= 0 with min 0 at the origin, so F*(0) = -min F = 0
        assert legendre_Fstar(pm_self_d2, np.zeros(2)) == pytest.approx(0.0, abs=1e-12)

    def test_numeric_matches_closed(self, pm_self_d2):
        rng = np.random.default_rng(3)
        for _ in range(5):
            q = rng.standard_normal(2)
            closed = legendre_Fstar(pm_self_d2, q)
            numeric = legendre_Fstar(pm_self_d2, q, method="numeric")
            assert abs(closed - numeric) < 1e-6

    def test_grid_search_oracle(self):
        A = np.array([[2.0, 0.5], [0.5, 1.5]])
        pm = potential_from_affine(coupling_affine(A))
        rng = np.random.default_rng(4)
        for _ in range(3):
            q = rng.standard_normal(2)
            p1 = np.arange(-6.0, 6.0, 5e-3)
            P1, P2 = np.meshgrid(p1, p1, indexing="ij")
            vals = (-q[0] * P1 - q[1] * P2
                    - 0.5 * (A[0, 0] * P1 ** 2 + 2 * A[0, 1] * P1 * P2
                             + A[1, 1] * P2 ** 2))
            assert legendre_Fstar(pm, q) == pytest.approx(float(vals.max()),
                                                          abs=1e-4)


class TestAction:
    def test_stationary_drift_value(self, pm_self_d2):
        st = solve_stationary(pm_self_d2.base)
        grid = TimeGrid(1.0, 400)
        uvals = np.tile(st.u_bar, (grid.M + 1, 1)) - np.outer(
            grid.nodes * st.kappa, np.ones(2))
        act = action(pm_self_d2, Trajectory(grid, uvals))
        htil = np.array([pm_self_d2.base.htilde(st.u_bar, i) for i in range(2)])
        expect = grid.T * legendre_Fstar(pm_self_d2, -st.kappa * np.ones(2) + htil)
        assert act == pytest.approx(expect, abs=1e-10)

    def test_constant_u(self, pm_self_d2):
        grid = TimeGrid(2.0, 200)
        act = action(pm_self_d2, Trajectory(grid, np.zeros((201, 2))))
        htil = np.zeros(2)
        assert act == pytest.approx(
            2.0 * legendre_Fstar(pm_self_d2, htil), abs=1e-12)

    def test_criticality_of_solutions(self, pm_self_d2):
        grid = TimeGrid(1.0, 500)
        sol = solve_mfg(pm_self_d2.base, [0.8, 0.2], grid, tol=1e-12)
        probe = criticality_probe(pm_self_d2, sol, n_directions=20, epsilon=1e-3)
        assert probe.worst <= 1e-3


class TestMasterField:
    def test_terminal_value(self, pm_self_d2):
        th = np.array([0.4, 0.6])
        got = master_field(pm_self_d2.base, th, 1.0, 1.0)
        assert np.array_equal(got, pm_self_d2.base.psi(th))

    def test_symmetric_closed_form(self, pm_self_d2):
        got = master_field(pm_self_d2.base, [0.5, 0.5], 0.25, 1.0, grid_M=200)
        assert np.abs(got - (1.0 - 0.25) / 2).max() < 1e-10

    def test_nplayer_consistency_shrinks(self, quad_self_psi_d2):
        # max_n |u^N_n(0) - U(n/N, 0)| decreases with N
        grid = TimeGrid(0.25, 200)
        gaps = []
        for N in (4, 8, 16):
            nf = solve_equilibrium(quad_self_psi_d2, N, grid)
            worst = 0.0
            for s in range(nf.indexer.size):
                th = nf.indexer.states[s] / N
                U = master_field(quad_self_psi_d2, th, 0.0, 0.25, grid_M=200)
                worst = max(worst, float(np.abs(nf.values[0, :, s] - U).max()))
            gaps.append(worst)
        assert gaps[2] < gaps[1] < gaps[0]
        slope, _ = loglog_slope([4, 8, 16], gaps)
        assert slope < -0.5


class TestPlanning:
    def test_stationary_target_zero_iterations(self, pm_self_d2):
        st = solve_stationary(pm_self_d2.base)
        res = solve_planning(pm_self_d2.base, st.theta_bar, st.theta_bar, 1.0,
                             grid_M=200, initial=st.u_bar[:1])
        assert res.iterations == 0
        assert res.terminal_gap <= 1e-6

    def test_round_trip(self, pm_self_d2):
        res = solve_planning(pm_self_d2.base, [0.6, 0.4], [0.5, 0.5], 1.0,
                             grid_M=300)
        assert res.terminal_gap <= 1e-6
        # re-solving the plain problem with the found terminal value
        # reproduces the same trajectory
        from fsmfg.mfg import _with_psi
        vec = res.terminal_value
        work = _with_psi(pm_self_d2.base, lambda th: vec.copy())
        again = solve_mfg(work, [0.6, 0.4], TimeGrid(1.0, 300))
        assert np.abs(again.theta.values - res.solution.theta.values).max() < 1e-9
        assert np.abs(again.u.values - res.solution.u.values).max() < 1e-9

    def test_infeasible_reports_gap(self, pm_self_d2):
        with pytest.raises(PlanningError) as exc:
            solve_planning(pm_self_d2.base, [0.95, 0.05], [0.05, 0.95], 0.05,
                           grid_M=100, max_iter=4)
        assert exc.value.best_gap is not None and exc.value.best_gap > 0
