import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fsmfg.core import (IntegrationError, SimplexError, StateSpaceTooLarge,
                        TimeGrid, Trajectory, as_simplex, delta,
                        enumerate_states, integrate, sharp_norm)

finite_vecs = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2,
                       max_size=6).map(np.array)


class TestSimplex:
    def test_valid(self):
        v = as_simplex([0.25, 0.75])
        assert v.sum() == pytest.approx(1.0, abs=1e-15)

    def test_clips_roundoff_negatives(self):
        v = as_simplex([1.0 + 5e-13, -5e-13])
        assert v[1] == 0.0 and v.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_bad_negative(self):
        with pytest.raises(SimplexError):
            as_simplex([1.1, -0.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(SimplexError):
            as_simplex([0.6, 0.6])


class TestSharpNorm:
    def test_constant_vector_is_zero(self):
        assert sharp_norm([3.7] * 5) == 0.0

    def test_two_point(self):
        assert sharp_norm([1.0, -1.0]) == 1.0

    def test_three_point(self):
        assert sharp_norm([3.0, 1.0, 2.0]) == 1.0

    @given(finite_vecs, st.floats(-1e6, 1e6, allow_nan=False))
    def test_shift_invariance(self, v, c):
        assert sharp_norm(v + c) == pytest.approx(sharp_norm(v), rel=1e-9, abs=1e-9)

    @given(finite_vecs)
    def test_dominated_by_delta_sup_norm(self, v):
        # ||Delta_i v||_inf >= ||v||_sharp for every i
        for i in range(v.size):
            assert np.abs(delta(i, v)).max() >= sharp_norm(v) - 1e-12


class TestDelta:
    def test_constant(self):
        assert np.array_equal(delta(0, np.array([5.0, 5.0, 5.0])), np.zeros(3))

    def test_first_index(self):
        assert np.array_equal(delta(0, np.array([0.0, 1.0])), np.array([0.0, 1.0]))

    def test_second_index(self):
        assert np.array_equal(delta(1, np.array([0.0, 1.0])), np.array([-1.0, 0.0]))

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            delta(2, np.array([0.0, 1.0]))


class TestStateIndexer:
    def test_d2_n2_enumeration(self):
        idx = enumerate_states(2, 2)
        assert idx.size == 3
        assert [tuple(s) for s in idx.states] == [(2, 0), (1, 1), (0, 2)]

    def test_d3_n2_size(self):
        assert enumerate_states(3, 2).size == 6

    def test_d2_n64_size(self):
        assert enumerate_states(2, 64).size == 65

    def test_cap(self):
        with pytest.raises(StateSpaceTooLarge):
            enumerate_states(6, 200, cap=1000)

    @pytest.mark.parametrize("d,N", [(2, 30), (3, 17), (4, 9)])
    def test_round_trip(self, d, N):
        idx = enumerate_states(d, N)
        assert idx.size == math.comb(N + d - 1, d - 1)
        for s in range(idx.size):
            assert idx.index_of(idx.states[s]) == s

    def test_neighbor_table(self):
        idx = enumerate_states(3, 4)
        nbr = idx.neighbor_table()
        for s in range(idx.size):
            n = idx.states[s]
            for k in range(3):
                for j in range(3):
                    if n[k] == 0:
                        assert nbr[s, j, k] == -1
                    elif j == k:
                        assert nbr[s, j, k] == s
                    else:
                        m = n.copy()
                        m[j] += 1
                        m[k] -= 1
                        assert np.array_equal(idx.states[nbr[s, j, k]], m)

    def test_invalid_vector(self):
        idx = enumerate_states(2, 3)
        with pytest.raises(ValueError):
            idx.index_of(np.array([2, 2]))


class TestTimeGridTrajectory:
    def test_nodes(self):
        g = TimeGrid(2.0, 4)
        assert np.allclose(g.nodes, [0, 0.5, 1.0, 1.5, 2.0])
        assert g.dt == 0.5

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            TimeGrid(-1.0, 10)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 0)

    def test_linear_interpolation(self):
        g = TimeGrid(1.0, 2)
        tr = Trajectory(g, np.array([[0.0], [1.0], [4.0]]))
        assert tr.at(0.25)[0] == pytest.approx(0.5)
        assert tr.at(0.75)[0] == pytest.approx(2.5)
        assert tr.at(1.0)[0] == 4.0

    def test_values_read_only(self):
        g = TimeGrid(1.0, 1)
        tr = Trajectory(g, np.zeros((2, 1)))
        with pytest.raises(ValueError):
            tr.values[0] = 1.0

    def test_hermite_matches_cubic(self):
        # values/derivs of t^3 reproduce it exactly between nodes
        g = TimeGrid(1.0, 4)
        t = g.nodes
        tr = Trajectory(g, (t ** 3)[:, None], (3 * t ** 2)[:, None])
        for q in (0.1, 0.3, 0.62, 0.9):
            assert tr.at_dense(q)[0] == pytest.approx(q ** 3, abs=1e-14)


class TestIntegrate:
    def test_constant_field(self):
        g = TimeGrid(3.0, 10)
        tr = integrate(lambda t, y: np.zeros_like(y), np.array([2.0, -1.0]), g)
        assert np.array_equal(tr.values[-1], [2.0, -1.0])

    def test_exponential_decay(self):
        g = TimeGrid(1.0, 1000)
        tr = integrate(lambda t, y: -y, np.array([1.0]), g)
        assert abs(tr.values[-1][0] - math.exp(-1)) < 1e-10

    def test_two_state_kolmogorov_closed_form(self):
        # constant rates beta_{12}=1, beta_{21}=0 from theta0=(1,0)
        B = np.array([[-1.0, 1.0], [0.0, 0.0]])
        g = TimeGrid(1.0, 1000)
        tr = integrate(lambda t, th: B.T @ th, np.array([1.0, 0.0]), g)
        assert abs(tr.values[-1][0] - math.exp(-1)) < 1e-9
        assert abs(tr.values[-1][1] - (1 - math.exp(-1))) < 1e-9

    def test_backward_terminal_data(self):
        # -du/dt = 1  =>  u(t) = T - t for u(T) = 0
        g = TimeGrid(2.0, 100)
        tr = integrate(lambda t, y: -np.ones_like(y), np.array([0.0]), g,
                       direction="backward")
        assert np.allclose(tr.values[:, 0], 2.0 - g.nodes, atol=1e-12)

    def test_mass_conservation_random_rates(self):
        rng = np.random.default_rng(7)
        d = 4
        B = rng.uniform(0.0, 2.0, size=(d, d))
        np.fill_diagonal(B, 0.0)
        np.fill_diagonal(B, -B.sum(axis=1))
        g = TimeGrid(1.0, 500)
        tr = integrate(lambda t, th: B.T @ th, rng.dirichlet(np.ones(d)), g)
        assert np.abs(tr.values.sum(axis=1) - 1.0).max() <= 1e-10

    def test_nonfinite_aborts_with_node(self):
        g = TimeGrid(1.0, 100)
        with np.errstate(over="ignore"), pytest.raises(IntegrationError) as exc:
            integrate(lambda t, y: y ** 3, np.array([5.0]), g)
        assert exc.value.node is not None

    def test_bad_direction(self):
        g = TimeGrid(1.0, 10)
        with pytest.raises(ValueError):
            integrate(lambda t, y: y, np.array([1.0]), g, direction="sideways")
