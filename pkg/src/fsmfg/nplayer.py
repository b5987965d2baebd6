"""The exact N+1-player game.

Backward solve of the equilibrium value ODE over all (state, occupancy)
pairs, gradient-profile measurement, exact propagation of the joint law of
(own state, occupancy vector), uniformized Monte Carlo path simulation, and
the convergence study against the mean field solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cost as costmod
from .backend import kernels
from .core import StateIndexer, TimeGrid, as_simplex, enumerate_states
from .cost import hamiltonian, optimal_control


class RateBoundError(RuntimeError):
    """The uniformization bound was exceeded during simulation."""


@dataclass
class NField:
    """Equilibrium value function u^{N,i}_n(t_k), dense over the state space."""

    indexer: StateIndexer
    grid: TimeGrid
    values: np.ndarray  # (M+1, d, S)

    @property
    def N(self):
        return self.indexer.N

    @property
    def d(self):
        return self.indexer.d

    def at(self, t):
        """Linear interpolation between time nodes, shape (d, S)."""
        k, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[k]
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def value(self, i, state, k):
        return float(self.values[k, i, self.indexer.index_of(state)])


@dataclass
class JointLaw:
    """Probability of (own state i, occupancy n) per time node."""

    indexer: StateIndexer
    grid: TimeGrid
    values: np.ndarray  # (M+1, d, S)

    def n_marginal(self, k):
        return self.values[k].sum(axis=0)

    def i_marginal(self, k):
        return self.values[k].sum(axis=1)

    def mass(self):
        return self.values.sum(axis=(1, 2))


@dataclass
class PathBatch:
    """Seeded uniformization runs of the joint chain.

    ``events[p]`` lists (time, own state, occupancy index) after each jump;
    initial conditions are in ``init_i``/``init_s``.
    """

    indexer: StateIndexer
    grid: TimeGrid
    seed: int
    init_i: np.ndarray
    init_s: np.ndarray
    events: list
    rate_bound: float

    @property
    def n_paths(self):
        return len(self.events)

    def states_at_nodes(self):
        """(own-state, occupancy-index) arrays of shape (paths, M+1)."""
        nodes = self.grid.nodes
        P = self.n_paths
        I = np.empty((P, nodes.size), dtype=np.int64)
        S = np.empty((P, nodes.size), dtype=np.int64)
        for p, ev in enumerate(self.events):
            ti = np.array([e[0] for e in ev])
            seq_i = np.concatenate(([self.init_i[p]], [e[1] for e in ev])).astype(np.int64)
            seq_s = np.concatenate(([self.init_s[p]], [e[2] for e in ev])).astype(np.int64)
            pos = np.searchsorted(ti, nodes, side="right")
            I[p] = seq_i[pos]
            S[p] = seq_s[pos]
        return I, S


def _lattice_tables(model, indexer):
    """Coupling and terminal values at every lattice point n/N."""
    d, S, N = indexer.d, indexer.size, indexer.N
    fvals = np.empty((d, S))
    psiT = np.empty((d, S))
    fast = isinstance(model, costmod.QuadraticCost)
    for s in range(S):
        th = indexer.states[s] / N
        psiT[:, s] = model.psi(th)
        if fast:
            fvals[:, s] = model.f(th)
        else:
            zero = np.zeros(d)
            fvals[:, s] = [hamiltonian(model, zero, th, i) for i in range(d)]
    return fvals, psiT


def _safe_neighbors(indexer):
    nbr = indexer.neighbor_table()
    return np.clip(nbr, 0, None), nbr


def solve_equilibrium(model, N, grid, indexer=None, cap=None):
    """Backward RK4 solve of the equilibrium value ODE.

    -du^i_n/dt = sum_{k,j} gamma^{n,i}_{kj} (u^i_{n+e_jk} - u^i_n)
                 + h(Delta_i u_n, n/N, i),
    gamma^{n,i}_{kj} = n_k alpha*_j(Delta_k u at n+e_ik, (n+e_ik)/N, k),

    with terminal data u^i_n(T) = psi^i(n/N).  Quadratic-family models run
    through the active kernel backend; other models fall back to a generic
    per-state evaluation (tiny instances only).
    """
    if indexer is None:
        indexer = enumerate_states(model.d, N, **({"cap": cap} if cap else {}))
    fvals, psiT = _lattice_tables(model, indexer)
    nbr_safe, _ = _safe_neighbors(indexer)
    if isinstance(model, costmod.QuadraticCost):
        vals = kernels().quad_npl_backward(indexer.states, nbr_safe, fvals, psiT,
                                           grid.dt, grid.M)
    else:
        vals = _generic_npl_backward(model, indexer, nbr_safe, psiT, grid)
    if not np.all(np.isfinite(vals)):
        raise RuntimeError("non-finite values in equilibrium solve")
    return NField(indexer, grid, vals)


def _generic_npl_rhs(model, u, indexer, nbr):
    d, S = u.shape
    N = indexer.N
    du = np.zeros_like(u)
    for s in range(S):
        n = indexer.states[s]
        th = n / N
        for i in range(d):
            acc = hamiltonian(model, u[:, s], th, i)
            for k in range(d):
                if n[k] == 0:
                    continue
                sp = nbr[s, i, k]
                a = optimal_control(model, u[:, sp], indexer.states[sp] / N, k)
                for j in range(d):
                    if j == k:
                        continue
                    acc += n[k] * a[j] * (u[i, nbr[s, j, k]] - u[i, s])
            du[i, s] = -acc
    return du


def _generic_npl_backward(model, indexer, nbr, psiT, grid):
    M = grid.M
    h = -grid.dt
    vals = np.empty((M + 1,) + psiT.shape)
    vals[M] = psiT
    y = psiT.copy()
    for k in range(M, 0, -1):
        k1 = _generic_npl_rhs(model, y, indexer, nbr)
        k2 = _generic_npl_rhs(model, y + 0.5 * h * k1, indexer, nbr)
        k3 = _generic_npl_rhs(model, y + 0.5 * h * k2, indexer, nbr)
        k4 = _generic_npl_rhs(model, y + h * k3, indexer, nbr)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        vals[k - 1] = y
    return vals


def gradient_profile(nfield):
    """Per-node max over moves e_rs and entries (i, n) of |u_{n+e_rs} - u_n|."""
    idx = nfield.indexer
    nbr = idx.neighbor_table()
    vals = nfield.values  # (M+1, d, S)
    out = np.zeros(vals.shape[0])
    for r in range(idx.d):
        for s in range(idx.d):
            if r == s:
                continue
            tgt = nbr[:, r, s]
            ok = tgt >= 0
            if not ok.any():
                continue
            diff = vals[:, :, tgt[ok]] - vals[:, :, ok.nonzero()[0]]
            out = np.maximum(out, np.abs(diff).max(axis=(1, 2)))
    return out


def multinomial_pmf(indexer, theta0):
    """Probability of each occupancy vector under Multinomial(N, theta0)."""
    theta0 = as_simplex(theta0)
    N = indexer.N
    logs = np.full(indexer.size, -np.inf)
    lg = math.lgamma
    for s in range(indexer.size):
        n = indexer.states[s]
        val = lg(N + 1)
        ok = True
        for l in range(indexer.d):
            val -= lg(int(n[l]) + 1)
            if theta0[l] == 0.0:
                if n[l] > 0:
                    ok = False
                    break
            else:
                val += n[l] * math.log(theta0[l])
        if ok:
            logs[s] = val
    p = np.exp(logs)
    return p / p.sum()


def propagate_exact_law(model, nfield, theta0, grid=None, neg_tol=1e-10):
    """Forward RK4 of the joint chain's master equation.

    Initial law: own state ~ theta0, occupancy ~ Multinomial(N, theta0),
    independent.  Aborts if any probability drops below -neg_tol.
    """
    grid = grid or nfield.grid
    if grid.M != nfield.grid.M or abs(grid.T - nfield.grid.T) > 1e-15 * max(1.0, grid.T):
        raise ValueError("law grid must match the solved field's grid")
    idx = nfield.indexer
    theta0 = as_simplex(theta0)
    p0 = np.outer(theta0, multinomial_pmf(idx, theta0))
    nbr_safe, _ = _safe_neighbors(idx)
    if isinstance(model, costmod.QuadraticCost):
        law = kernels().quad_jointlaw_forward(nfield.values, idx.states, nbr_safe,
                                              p0, grid.dt)
    else:
        law = _generic_jointlaw(model, nfield, idx, nbr_safe, p0, grid)
    low = float(law.min())
    if low < -neg_tol:
        raise RuntimeError(f"negative probability {low:.3e}; time step too coarse")
    return JointLaw(idx, grid, law)


def _joint_rates(model, u, idx, nbr):
    """Own-jump and background rate tables at one instant (generic models)."""
    d, S = u.shape
    N = idx.N
    own = np.zeros((d, d, S))
    bg = np.zeros((d, d, d, S))  # [i, k, j, s]
    for s in range(S):
        n = idx.states[s]
        for i in range(d):
            a = optimal_control(model, u[:, s], n / N, i)
            own[i, :, s] = np.clip(a, 0.0, None)
            own[i, i, s] = 0.0
            for k in range(d):
                if n[k] == 0:
                    continue
                sp = nbr[s, i, k]
                ak = optimal_control(model, u[:, sp], idx.states[sp] / N, k)
                for j in range(d):
                    if j != k:
                        bg[i, k, j, s] = n[k] * max(ak[j], 0.0)
    return own, bg


def _generic_joint_rhs(model, p, u, idx, nbr):
    d, S = p.shape
    own, bg = _joint_rates(model, u, idx, nbr)
    dp = np.zeros_like(p)
    for i in range(d):
        for j in range(d):
            if j == i:
                continue
            r = own[i, j] * p[i]
            dp[j] += r
            dp[i] -= r
        for k in range(d):
            for j in range(d):
                if j == k:
                    continue
                flow = bg[i, k, j] * p[i]
                dp[i] -= flow
                np.add.at(dp[i], nbr[:, j, k], flow)
    return dp


def _generic_jointlaw(model, nfield, idx, nbr, p0, grid):
    M = grid.M
    dt = grid.dt
    law = np.empty((M + 1,) + p0.shape)
    law[0] = p0
    y = p0.copy()
    F = nfield.values
    for k in range(M):
        umid = 0.5 * (F[k] + F[k + 1])
        k1 = _generic_joint_rhs(model, y, F[k], idx, nbr)
        k2 = _generic_joint_rhs(model, y + 0.5 * dt * k1, umid, idx, nbr)
        k3 = _generic_joint_rhs(model, y + 0.5 * dt * k2, umid, idx, nbr)
        k4 = _generic_joint_rhs(model, y + dt * k3, F[k + 1], idx, nbr)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        law[k + 1] = y
    return law


def _field_rate_bound(nfield):
    """Max alpha* magnitude over the stored field (quadratic closed form)."""
    vals = nfield.values
    return float((vals.max(axis=1) - vals.min(axis=1)).max())


def simulate_paths(model, nfield, theta0, n_paths, seed=0):
    """Uniformized simulation of the joint chain under the equilibrium field.

    Per-path streams come from a counter-based generator keyed by
    (seed, path index), so results are reproducible regardless of any outer
    parallel schedule.  The clock rate is
    Lambda = 1.05 (N+1) d max|alpha*| from the stored field; exceeding it at
    a sampled event raises ``RateBoundError``.
    """
    idx = nfield.indexer
    grid = nfield.grid
    d, N = idx.d, idx.N
    theta0 = as_simplex(theta0)
    nbr_safe, nbr = _safe_neighbors(idx)
    quad = isinstance(model, costmod.QuadraticCost)
    if quad:
        amax = _field_rate_bound(nfield)
    else:
        sub = nfield.values[:: max(1, grid.M // 64)]
        amax = 1.2 * max(
            float(np.clip(optimal_control(model, sub[t][:, s], idx.states[s] / N, k), 0, None).max())
            for t in range(sub.shape[0]) for s in range(idx.size) for k in range(d))
    lam = 1.05 * (N + 1) * d * max(amax, 1e-12)
    if not math.isfinite(lam):
        raise RateBoundError(f"uniformization bound overflow (lambda={lam})")
    T = grid.T
    F = nfield.values
    states = idx.states

    def rate_rows(i, s, k, w):
        u = (1.0 - w) * F[k] + w * F[k + 1]
        n = states[s]
        chans = []
        if quad:
            a_own = np.clip(u[i, s] - u[:, s], 0.0, None)
        else:
            a_own = np.clip(optimal_control(model, u[:, s], n / N, i), 0.0, None)
        for j in range(d):
            if j != i and a_own[j] > 0.0:
                chans.append((a_own[j], j, s))
        for kk in range(d):
            if n[kk] == 0:
                continue
            sp = nbr[s, i, kk]
            if quad:
                a_bg = np.clip(u[kk, sp] - u[:, sp], 0.0, None)
            else:
                a_bg = np.clip(optimal_control(model, u[:, sp], states[sp] / N, kk),
                               0.0, None)
            for j in range(d):
                if j != kk and a_bg[j] > 0.0:
                    chans.append((n[kk] * a_bg[j], i, nbr[s, j, kk]))
        return chans

    events = []
    init_i = np.empty(n_paths, dtype=np.int64)
    init_s = np.empty(n_paths, dtype=np.int64)
    for p in range(n_paths):
        rng = np.random.Generator(np.random.Philox(key=np.uint64([seed, p])))
        i = int(rng.choice(d, p=theta0))
        n0 = rng.multinomial(N, theta0)
        s = idx.index_of(n0)
        init_i[p] = i
        init_s[p] = s
        ev = []
        t = 0.0
        while True:
            t += rng.exponential(1.0 / lam)
            if t >= T:
                break
            k, w = grid.locate(t)
            chans = rate_rows(i, s, k, w)
            total = sum(c[0] for c in chans)
            if total > lam:
                raise RateBoundError(
                    f"total rate {total:.3e} exceeds uniformization bound {lam:.3e}")
            x = rng.uniform() * lam
            if x < total:
                acc = 0.0
                for r, ni, ns in chans:
                    acc += r
                    if x < acc:
                        i, s = ni, int(ns)
                        break
                ev.append((t, i, s))
        events.append(ev)
    return PathBatch(idx, grid, seed, init_i, init_s, events, lam)


@dataclass
class VWResult:
    """Squared-gap curves between the N-player run and the mean field."""

    times: np.ndarray
    V: np.ndarray  # (d, M+1) per-coordinate E[(n_l/N - theta_l)^2]
    W: np.ndarray  # (d, M+1) per-coordinate E[(u_l - u^{N,l}_{n_t})^2]
    V_se: np.ndarray | None = None
    W_se: np.ndarray | None = None

    @property
    def VN(self):
        return self.V.max(axis=0)

    @property
    def WN(self):
        return self.W.max(axis=0)

    @property
    def sup_total(self):
        return float((self.VN + self.WN).max())


def estimate_VW(nfield, source, solution):
    """V_N(l,t) and W_N(l,t) from an exact JointLaw or a PathBatch.

    The mean field pair (theta, u) is read off ``solution`` on the shared
    grid; a horizon/grid mismatch is an error.  Monte Carlo sources carry
    standard errors of each mean.
    """
    grid = nfield.grid
    if solution.grid.M != grid.M or abs(solution.grid.T - grid.T) > 1e-12 * max(1.0, grid.T):
        raise ValueError("mean field solution and N-player field must share the grid")
    idx = nfield.indexer
    d, N = idx.d, idx.N
    K = grid.M + 1
    frac = idx.states.T / N  # (d, S)
    theta = solution.theta.values
    u = solution.u.values
    V = np.empty((d, K))
    W = np.empty((d, K))
    if isinstance(source, JointLaw):
        if source.grid.M != grid.M:
            raise ValueError("joint law grid mismatch")
        for k in range(K):
            pn = source.values[k].sum(axis=0)
            for l in range(d):
                V[l, k] = float(pn @ (frac[l] - theta[k, l]) ** 2)
                W[l, k] = float(pn @ (u[k, l] - nfield.values[k, l]) ** 2)
        return VWResult(grid.nodes, V, W)
    if isinstance(source, PathBatch):
        I, S = source.states_at_nodes()
        P = source.n_paths
        V_se = np.empty((d, K))
        W_se = np.empty((d, K))
        for k in range(K):
            sk = S[:, k]
            for l in range(d):
                gv = (frac[l, sk] - theta[k, l]) ** 2
                gw = (u[k, l] - nfield.values[k, l, sk]) ** 2
                V[l, k] = float(gv.mean())
                W[l, k] = float(gw.mean())
                V_se[l, k] = float(gv.std(ddof=1)) / math.sqrt(P)
                W_se[l, k] = float(gw.std(ddof=1)) / math.sqrt(P)
        return VWResult(grid.nodes, V, W, V_se, W_se)
    raise TypeError(f"source must be JointLaw or PathBatch, got {type(source)!r}")


@dataclass
class ConvergenceRow:
    N: int
    sup_V: float
    sup_W: float
    sup_total: float


@dataclass
class ConvergenceStudy:
    rows: list
    slope: float
    r_squared: float
    mode: str

    def table(self):
        return [(r.N, r.sup_V, r.sup_W, r.sup_total) for r in self.rows]


def loglog_slope(xs, ys):
    """Least-squares slope and R^2 of log y against log x."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.clip(np.asarray(ys, dtype=float), 1e-300, None))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    fit = A @ coef
    ss_res = float(((ly - fit) ** 2).sum())
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), r2


def convergence_study(model, theta0, T, N_list, mode="exact", grid_M=1000,
                      solution=None, paths=10_000, seed=0):
    """sup_t (V_N + W_N) across the N sweep plus the log-log slope.

    ``mode`` selects the exact joint law or Monte Carlo paths as the source
    of the expectations.  The mean field solution is solved once (or passed
    in) on the shared grid.
    """
    if list(N_list) != sorted(set(N_list)):
        raise ValueError("N_list must be strictly increasing")
    from .mfg import solve_mfg  # local import to avoid a cycle
    grid = TimeGrid(T, grid_M)
    if solution is None:
        solution = solve_mfg(model, theta0, grid)
    rows = []
    for N in N_list:
        nf = solve_equilibrium(model, N, grid)
        if mode == "exact":
            src = propagate_exact_law(model, nf, theta0, grid)
        elif mode == "mc":
            src = simulate_paths(model, nf, theta0, paths, seed=seed + N)
        else:
            raise ValueError(f"mode must be 'exact' or 'mc', got {mode!r}")
        vw = estimate_VW(nf, src, solution)
        rows.append(ConvergenceRow(N, float(vw.VN.max()), float(vw.WN.max()),
                                   vw.sup_total))
    slope, r2 = loglog_slope([r.N for r in rows], [r.sup_total for r in rows])
    return ConvergenceStudy(rows, slope, r2, mode)
