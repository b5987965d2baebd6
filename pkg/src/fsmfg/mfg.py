"""Mean field game solvers.

The backward Hamilton-Jacobi solve for a given distribution trajectory,
the forward Kolmogorov solve for a given control field, the damped
fixed-point iteration for the coupled initial-terminal value problem,
stationary solutions, the trend-to-equilibrium experiment, a Monte Carlo
check of the value function, and the monotonicity audits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cost as costmod
from .backend import kernels
from .core import TimeGrid, Trajectory, as_simplex, delta, integrate, sharp_norm
from .cost import hamiltonian, hamiltonian_vector, optimal_control

DEFAULT_DAMPING = 0.5
DEFAULT_FP_TOL = 1e-9
DEFAULT_FP_MAX_ITER = 500


class FixedPointError(RuntimeError):
    """The damped iteration did not reach the requested tolerance."""

    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = list(gaps or [])


class StationaryError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class MfgSolution:
    """Converged equilibrium: distribution and value trajectories plus the
    central-difference defect of both equations on the interior nodes."""

    theta: Trajectory
    u: Trajectory
    residual: float
    iterations: int
    gaps: list = field(default_factory=list)

    @property
    def grid(self):
        return self.theta.grid


@dataclass
class StationaryTriple:
    theta_bar: np.ndarray
    u_bar: np.ndarray  # normalized: last entry 0
    kappa: float
    residual: float = math.nan


def _fast_model(model):
    """(A, b) when the compiled sweeps apply, else None."""
    coup = getattr(model, "coupling", None)
    if isinstance(model, costmod.QuadraticCost) and coup is not None and coup.affine is not None:
        return coup.affine
    return None


def solve_hj(model, theta_traj, grid=None):
    """Backward RK4 solve of -du^i/dt = h(Delta_i u, theta(t), i) with
    terminal data u(T) = psi(theta(T))."""
    grid = grid or theta_traj.grid
    same_grid = (theta_traj.grid.M == grid.M
                 and abs(theta_traj.grid.T - grid.T) < 1e-15 * max(1.0, grid.T))
    uT = model.psi(theta_traj.values[-1] if same_grid else theta_traj.at(grid.T))
    fast = _fast_model(model)
    if fast is not None and same_grid:
        A, b = fast
        u, udot = kernels().quad_hj_backward(
            theta_traj.values, theta_traj.derivs, A, b, uT, grid.dt)
        return Trajectory(grid, u, udot)

    def rhs(t, u):
        theta = theta_traj.at_dense(t)
        return -hamiltonian_vector(model, u, theta)

    return integrate(rhs, uT, grid, direction="backward")


def solve_kolmogorov(model, control_field, theta0, grid):
    """Forward solve of d theta^i/dt = sum_j theta^j beta_ji(t).

    ``control_field(i, t)`` returns the rate row of state i (diagonal
    entry ignored; rebuilt as minus the off-diagonal sum).  Off-diagonal
    rows are validated at every node before integration starts.
    """
    theta0 = as_simplex(theta0)
    d = model.d
    idx = np.arange(d)

    def beta_matrix(t):
        B = np.empty((d, d))
        for i in range(d):
            B[i] = np.asarray(control_field(i, t), dtype=float)
        B[idx, idx] = 0.0
        B[idx, idx] = -B.sum(axis=1)
        return B

    for t in grid.nodes:
        B = beta_matrix(t)
        off = B[~np.eye(d, dtype=bool)]
        if np.any(off < 0):
            raise ValueError(f"negative off-diagonal rate {off.min():.3e} at t={t:.6g}")

    traj = integrate(lambda t, th: beta_matrix(t).T @ th, theta0, grid, "forward")
    vals = traj.values.copy()
    for k in range(vals.shape[0]):
        vals[k] = as_simplex(vals[k])
    return Trajectory(grid, vals, traj.derivs)


def _kolmogorov_step(model, u_traj, theta_given, theta0, grid):
    """One xi-map forward solve: rates alpha*(Delta u(t), theta_given(t), .)."""
    fast = _fast_model(model)
    if fast is not None:
        theta, tdot = kernels().quad_kolmogorov_forward(
            u_traj.values, u_traj.derivs, np.asarray(theta0, dtype=float), grid.dt)
        return theta, tdot

    def rhs(t, th):
        u = u_traj.at_dense(t)
        thg = theta_given.at_dense(t)
        out = np.zeros(model.d)
        for j in range(model.d):
            out += th[j] * optimal_control(model, u, thg, j)
        return out

    traj = integrate(rhs, theta0, grid, "forward")
    return traj.values, traj.derivs


def kolmogorov_rhs(model, theta, u):
    """Right-hand side of the equilibrium Kolmogorov equation at one instant."""
    out = np.zeros(model.d)
    for j in range(model.d):
        out += theta[j] * optimal_control(model, u, theta, j)
    return out


def pvit_residual(model, theta_traj, u_traj):
    """Sup-norm central-difference defect of both equilibrium equations."""
    grid = theta_traj.grid
    th = theta_traj.values
    uu = u_traj.values
    dt = grid.dt
    worst = 0.0
    for k in range(1, grid.M):
        dth = (th[k + 1] - th[k - 1]) / (2.0 * dt)
        duu = (uu[k + 1] - uu[k - 1]) / (2.0 * dt)
        r1 = dth - kolmogorov_rhs(model, th[k], uu[k])
        r2 = -duu - hamiltonian_vector(model, uu[k], th[k])
        worst = max(worst, float(np.abs(r1).max()), float(np.abs(r2).max()))
    return worst


def apply_xi(model, theta_traj, grid):
    """One application of the fixed-point map: HJ solve, optimal control,
    Kolmogorov solve."""
    u_traj = solve_hj(model, theta_traj, grid)
    theta, tdot = _kolmogorov_step(model, u_traj, theta_traj,
                                   theta_traj.values[0], grid)
    return Trajectory(grid, theta, tdot), u_traj


def solve_mfg(model, theta0, grid, damping=DEFAULT_DAMPING, tol=DEFAULT_FP_TOL,
              max_iter=DEFAULT_FP_MAX_ITER, initial=None):
    """Damped fixed-point solve of the coupled initial-terminal value problem.

    Iterates theta <- (1 - damping) theta + damping xi(theta) on the node
    values until the sup-norm update gap falls below ``tol``; the returned
    value trajectory is the HJ solve against the converged distribution, so
    the terminal condition holds exactly.  ``initial`` seeds the iteration
    with given distribution nodes (default: constant theta0).  Raises
    ``FixedPointError`` with the gap history when ``max_iter`` is exhausted
    (expected for horizons well past the small-time contraction regime).
    """
    theta0 = as_simplex(theta0)
    if initial is None:
        nodes = np.tile(theta0, (grid.M + 1, 1))
    else:
        nodes = np.array([as_simplex(row) for row in np.asarray(initial, dtype=float)])
        if nodes.shape != (grid.M + 1, model.d):
            raise ValueError(f"initial guess must have shape {(grid.M + 1, model.d)}")
        nodes[0] = theta0
    theta_traj = Trajectory(grid, nodes, np.zeros_like(nodes))
    gaps = []
    for it in range(1, max_iter + 1):
        xi_traj, u_traj = apply_xi(model, theta_traj, grid)
        new_vals = (1.0 - damping) * theta_traj.values + damping * xi_traj.values
        new_dots = (1.0 - damping) * theta_traj.derivs + damping * xi_traj.derivs
        gap = float(np.abs(new_vals - theta_traj.values).max())
        gaps.append(gap)
        theta_traj = Trajectory(grid, new_vals, new_dots)
        if gap <= tol:
            u_traj = solve_hj(model, theta_traj, grid)
            res = pvit_residual(model, theta_traj, u_traj)
            return MfgSolution(theta_traj, u_traj, res, it, gaps)
    raise FixedPointError(
        f"fixed point did not converge in {max_iter} iterations "
        f"(last gap {gaps[-1]:.3e}, tol {tol:.1e})", gaps=gaps)


# ---------------------------------------------------------------------------
# maximum principle


def h_zero_bound(model, samples=10_000, seed=0, inflate=0.01):
    """Sampled bound for max_{i, theta} |h(0, theta, i)| (vertices included)."""
    return costmod.sampled_coupling_bound(model, samples=samples, seed=seed,
                                          inflate=inflate)


def max_principle_slack(u_traj, M_bound):
    """Worst slack of ||u(t)||_inf <= ||u(T)||_inf + 2 M (T - t) on the grid.

    Nonnegative slack means the bound holds everywhere.
    """
    vals = u_traj.values
    T = u_traj.grid.T
    uT = float(np.abs(vals[-1]).max())
    slack = np.inf
    for k, t in enumerate(u_traj.grid.nodes):
        bound = uT + 2.0 * M_bound * (T - t)
        slack = min(slack, bound - float(np.abs(vals[k]).max()))
    return float(slack)


# ---------------------------------------------------------------------------
# Monte Carlo verification of the value function


@dataclass
class SimulationReport:
    start_state: int
    paths: int
    value: float  # u^i(0) from the solution
    mc_mean: float
    mc_half_width: float  # 99% confidence
    perturbed_mean: float
    perturbed_half_width: float

    @property
    def value_in_ci(self):
        return abs(self.mc_mean - self.value) <= self.mc_half_width + 1e-12

    @property
    def perturbed_costlier(self):
        gap = self.perturbed_mean - self.mc_mean
        return gap > self.mc_half_width + self.perturbed_half_width


def _rate_tables(model, solution, perturb=None):
    """Per-node control rows and running-cost values for each state."""
    grid = solution.grid
    d = model.d
    nodes = grid.nodes
    rates = np.zeros((len(nodes), d, d))
    cvals = np.zeros((len(nodes), d))
    for k, t in enumerate(nodes):
        th = solution.theta.values[k]
        uu = solution.u.values[k]
        for i in range(d):
            a = optimal_control(model, uu, th, i)
            if perturb is not None and perturb[0] == i:
                a = a.copy()
                a[perturb[1]] += perturb[2]
                a[i] = 0.0
                a[i] = -np.delete(a, i).sum()
            rates[k, i] = a
            cvals[k, i] = model.running_cost(i, th, a)
    return rates, cvals


def _simulate_cost_mean(model, solution, rates, cvals, paths, seed, start_state):
    """Uniformized simulation of the reference player's chain; returns the
    per-path total costs."""
    grid = solution.grid
    d = model.d
    nodes = grid.nodes
    T = grid.T
    off = ~np.eye(d, dtype=bool)
    total = np.where(off, np.clip(rates, 0.0, None), 0.0).sum(axis=2)  # [K, d]
    lam = 1.05 * float(total.max()) + 1e-12
    # cumulative trapezoid of the running cost per state
    ctab = np.concatenate([np.zeros((1, d)),
                           np.cumsum(0.5 * (cvals[1:] + cvals[:-1]) * grid.dt, axis=0)])
    psiT = model.psi(solution.theta.values[-1])

    def running_integral(i, t0, t1):
        c0 = np.interp(t0, nodes, ctab[:, i])
        c1 = np.interp(t1, nodes, ctab[:, i])
        return c1 - c0

    costs = np.empty(paths)
    for p in range(paths):
        rng = np.random.Generator(np.random.Philox(key=np.uint64([seed, p])))
        clock = 0.0
        anchor = 0.0  # start of the current constant-state segment
        i = start_state
        cost = 0.0
        while True:
            clock += rng.exponential(1.0 / lam)
            if clock >= T:
                cost += running_integral(i, anchor, T)
                break
            k, w = grid.locate(clock)
            row = (1.0 - w) * rates[k, i] + w * rates[k + 1, i]
            row = np.clip(row, 0.0, None)
            row[i] = 0.0
            u01 = rng.uniform()
            csum = row.cumsum()
            if u01 * lam < csum[-1]:
                j = int(np.searchsorted(csum, u01 * lam, side="right"))
                cost += running_integral(i, anchor, clock)
                i = j
                anchor = clock
            # thinned events leave both the state and the anchor alone
        cost += float(psiT[i])
        costs[p] = cost
    return costs


def verify_value_by_simulation(model, solution, paths=10_000, seed=0,
                               start_state=0, perturb="auto"):
    """Simulate the optimal chain and one perturbed control; compare the Monte
    Carlo means against u^i(0).

    ``perturb`` is (state, target, delta) or "auto" for +0.5 on the rate out
    of the start state.
    """
    if perturb == "auto":
        perturb = (start_state, (start_state + 1) % model.d, 0.5)
    rates, cvals = _rate_tables(model, solution)
    costs = _simulate_cost_mean(model, solution, rates, cvals, paths, seed, start_state)
    prates, pcvals = _rate_tables(model, solution, perturb=perturb)
    pcosts = _simulate_cost_mean(model, solution, prates, pcvals, paths,
                                 seed + 1, start_state)
    z99 = 2.5758293035489004
    hw = z99 * float(costs.std(ddof=1)) / math.sqrt(paths)
    phw = z99 * float(pcosts.std(ddof=1)) / math.sqrt(paths)
    return SimulationReport(start_state, paths, float(solution.u.values[0, start_state]),
                            float(costs.mean()), hw, float(pcosts.mean()), phw)


# ---------------------------------------------------------------------------
# stationary solutions


def stationary_residual(model, triple):
    """Max residual of both stationarity lines."""
    th, ub, kap = triple.theta_bar, triple.u_bar, triple.kappa
    kol = kolmogorov_rhs(model, th, ub)
    hline = hamiltonian_vector(model, ub, th) - kap
    return max(float(np.abs(kol).max()), float(np.abs(hline).max()))


def _stationary_unpack(model, x):
    d = model.d
    th = np.empty(d)
    th[:d - 1] = x[:d - 1]
    th[d - 1] = 1.0 - x[:d - 1].sum()
    ub = np.zeros(d)
    ub[:d - 1] = x[d - 1:2 * d - 2]
    return th, ub, float(x[2 * d - 2])


def solve_stationary(model, guess=None, tol=1e-8, max_iter=200):
    """Damped Newton (central FD Jacobian) for the stationary triple.

    Unknowns are theta_bar[:d-1], u_bar[:d-1] (gauge u_bar[d-1] = 0) and the
    drift kappa; the d Kolmogorov rows sum to zero identically, so the first
    d-1 of them join the d Hamiltonian rows in a square system.
    """
    d = model.d
    if guess is None:
        th0 = np.full(d, 1.0 / d)
        kap0 = float(np.mean([hamiltonian(model, np.zeros(d), th0, i) for i in range(d)]))
        guess = StationaryTriple(th0, np.zeros(d), kap0)
    x = np.concatenate([guess.theta_bar[:d - 1], guess.u_bar[:d - 1], [guess.kappa]])

    def F(x):
        th, ub, kap = _stationary_unpack(model, x)
        kol = kolmogorov_rhs(model, th, ub)
        hline = hamiltonian_vector(model, ub, th) - kap
        return np.concatenate([kol[:d - 1], hline])

    fx = F(x)
    n = x.size
    fd = 1e-7
    for _ in range(max_iter):
        if np.abs(fx).max() <= tol:
            break
        J = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = fd
            J[:, j] = (F(x + e) - F(x - e)) / (2.0 * fd)
        step, *_ = np.linalg.lstsq(J, -fx, rcond=None)
        lam = 1.0
        base = np.abs(fx).max()
        improved = False
        while lam > 1e-12:
            cand = x + lam * step
            fc = F(cand)
            if np.abs(fc).max() < base * (1.0 - 1e-4 * lam):
                x, fx = cand, fc
                improved = True
                break
            lam *= 0.5
        if not improved:
            # Levenberg fallback for the one-sided kinks of alpha*
            for mu in (1e-8, 1e-4, 1e-2, 1.0):
                step = np.linalg.solve(J.T @ J + mu * np.eye(n), -J.T @ fx)
                cand = x + step
                fc = F(cand)
                if np.abs(fc).max() < base:
                    x, fx = cand, fc
                    improved = True
                    break
            if not improved:
                raise StationaryError(
                    f"Newton stagnated at residual {base:.3e}", residual=float(base))
    th, ub, kap = _stationary_unpack(model, x)
    triple = StationaryTriple(as_simplex(th, neg_tol=1e-9), ub, kap)
    triple.residual = stationary_residual(model, triple)
    if triple.residual > tol:
        raise StationaryError(
            f"stationary residual {triple.residual:.3e} above {tol:.1e}",
            residual=triple.residual)
    return triple


def multistart_stationary(model, n_starts=10, seed=0, tol=1e-8):
    """Stationary solve from random seeds; returns (triples, max spread).

    Spread is the worst pairwise sup-distance across (theta, u, kappa),
    the numerical-uniqueness measure.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    triples = []
    attempts = 0
    while len(triples) < n_starts and attempts < 5 * n_starts:
        attempts += 1
        th0 = rng.dirichlet(np.ones(d))
        ub0 = np.zeros(d)
        ub0[:d - 1] = 0.5 * rng.standard_normal(d - 1)
        kap0 = float(np.mean([hamiltonian(model, ub0, th0, i) for i in range(d)]))
        kap0 += 0.1 * rng.standard_normal()
        try:
            triples.append(solve_stationary(
                model, StationaryTriple(th0, ub0, kap0), tol=tol))
        except StationaryError:
            continue
    if len(triples) < n_starts:
        raise StationaryError(f"only {len(triples)}/{n_starts} starts converged")
    spread = 0.0
    for a in triples:
        for b in triples:
            spread = max(spread,
                         float(np.abs(a.theta_bar - b.theta_bar).max()),
                         float(np.abs(a.u_bar - b.u_bar).max()),
                         abs(a.kappa - b.kappa))
    return triples, spread


# ---------------------------------------------------------------------------
# trend to equilibrium


@dataclass
class TrendResult:
    stationary: StationaryTriple
    horizons: list
    theta_gaps: list
    u_gaps: list
    theta_rate: float
    u_rate: float

    def rows(self):
        return list(zip(self.horizons, self.theta_gaps, self.u_gaps))


def _decay_rate(T_vals, gaps):
    """Positive rate r from fitting gap ~ exp(-r T) over the last 3 points."""
    t = np.asarray(T_vals[-3:], dtype=float)
    if t.size < 2:
        return math.nan
    g = np.log(np.clip(np.asarray(gaps[-3:], dtype=float), 1e-300, None))
    slope = np.polyfit(t, g, 1)[0]
    return float(-slope)


def trend_experiment(model, theta0, T_list, psi=None, M=1000,
                     stationary=None, damping=DEFAULT_DAMPING, tol=DEFAULT_FP_TOL,
                     max_iter=2000):
    """Gap to the stationary triple at the midpoint of a [0, 2T] window.

    The source poses data at -T and reads at 0; each horizon here is the
    re-centered window [0, 2T] read at its midpoint.  On fixed-point
    failure the damping is halved (twice) before giving up.
    """
    work = model
    if psi is not None:
        work = _with_psi(model, psi)
    if stationary is None:
        stationary = solve_stationary(work)
    horizons, tgaps, ugaps = [], [], []
    for T in T_list:
        grid = TimeGrid(2.0 * T, M)
        sol = None
        dmp = damping
        while dmp > 1e-3:
            try:
                sol = solve_mfg(work, theta0, grid, damping=dmp, tol=tol,
                                max_iter=max_iter)
                break
            except FixedPointError:
                dmp *= 0.5  # the Picard map stops contracting at large horizons
        if sol is None:
            raise FixedPointError(f"trend solve failed for horizon 2T={2 * T}")
        mid = grid.M // 2
        th_mid = sol.theta.values[mid]
        u_mid = sol.u.values[mid]
        horizons.append(T)
        tgaps.append(float(np.abs(th_mid - stationary.theta_bar).max()))
        ugaps.append(sharp_norm(u_mid - stationary.u_bar))
    return TrendResult(stationary, horizons, tgaps, ugaps,
                       _decay_rate(horizons, tgaps), _decay_rate(horizons, ugaps))


def _with_psi(model, psi):
    if isinstance(model, costmod.QuadraticCost):
        return costmod.QuadraticCost(model.coupling, terminal_cost=psi,
                                     alpha_cap=model.alpha_cap)
    clone = costmod.CostModel(model.d, model.running_cost, psi, model.gamma,
                              model.lip_c, model.lip_grad_c, model.alpha_cap,
                              model.grad_alpha)
    clone.closed_hamiltonian = model.closed_hamiltonian
    clone.closed_control = model.closed_control
    return clone


# ---------------------------------------------------------------------------
# monotonicity audit


@dataclass
class MonotonicityReport:
    psi_worst: float       # most negative pairing of the terminal cost (>= 0 wanted)
    concavity_worst: float  # largest superdifferential slack (<= 0 wanted)
    gamma_i: np.ndarray    # empirical concavity constants per state
    monot_worst: float     # largest coupling-monotonicity slack (<= 0 wanted)
    gamma: float           # empirical monotonicity constant

    def ok(self, tol=1e-8):
        return (self.psi_worst >= -tol and self.concavity_worst <= tol
                and self.monot_worst <= tol)


def monotonicity_audit(model, samples=200, seed=0, z_scale=1.0):
    """Sampled slacks for the three monotonicity/concavity assumptions."""
    rng = np.random.default_rng(seed)
    d = model.d
    psi_worst = np.inf
    conc_worst = -np.inf
    monot_worst = -np.inf
    gamma_i = np.full(d, np.inf)
    gamma = np.inf
    for _ in range(samples):
        th = rng.dirichlet(np.ones(d))
        th2 = rng.dirichlet(np.ones(d))
        z = z_scale * rng.standard_normal(d)
        z2 = z_scale * rng.standard_normal(d)
        psi_worst = min(psi_worst,
                        float((th - th2) @ (model.psi(th) - model.psi(th2))))
        for i in range(d):
            lhs = (hamiltonian(model, z, th, i) - hamiltonian(model, z2, th, i)
                   - optimal_control(model, z2, th, i) @ (delta(i, z) - delta(i, z2)))
            conc_worst = max(conc_worst, lhs)
            dz2 = float(np.sum((delta(i, z) - delta(i, z2)) ** 2))
            if dz2 > 1e-4:
                gamma_i[i] = min(gamma_i[i], -lhs / dz2)
        hv_z_th = hamiltonian_vector(model, z, th)
        hv_z_th2 = hamiltonian_vector(model, z, th2)
        hv_z2_th = hamiltonian_vector(model, z2, th)
        hv_z2_th2 = hamiltonian_vector(model, z2, th2)
        slack = float(th @ (hv_z_th2 - hv_z_th) + th2 @ (hv_z2_th - hv_z2_th2))
        monot_worst = max(monot_worst, slack)
        dth2 = float(np.sum((th - th2) ** 2))
        if dth2 > 1e-6:
            gamma = min(gamma, -slack / dth2)
    return MonotonicityReport(psi_worst, conc_worst, gamma_i, monot_worst, gamma)
