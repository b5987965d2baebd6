"""Potential mean field games.

For separated Hamiltonians h = htilde(z, i) + f^i(theta) with f the
gradient of a convex potential, the equilibrium flow is Hamiltonian for

    H(u, theta) = sum_i theta^i htilde(Delta_i u, i) + F(theta),

which is conserved along solutions.  This module evaluates H, the Legendre
transform F*, the action functional whose critical points are equilibria,
the master field via characteristics, and planning by shooting on a
constant terminal value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize as sp_optimize

from .core import TimeGrid, as_simplex
from .cost import QuadraticCost
from .mfg import MfgSolution, solve_mfg


class PlanningError(RuntimeError):
    def __init__(self, message, best_gap=None, terminal_value=None):
        super().__init__(message)
        self.best_gap = best_gap
        self.terminal_value = terminal_value


class LegendreError(RuntimeError):
    """Numeric maximization of the Legendre transform failed."""


@dataclass
class PotentialModel:
    """A quadratic-family model together with its convex potential.

    ``Phi`` must satisfy grad Phi = f for the model's coupling; the
    constructor spot-checks that with central differences on sampled
    points.  When the coupling is affine, f = A theta + b with A symmetric
    positive semidefinite, Phi and F* have closed forms.
    """

    base: QuadraticCost
    Phi: object  # callable theta -> float

    def __post_init__(self):
        rng = np.random.default_rng(12345)
        d = self.base.d
        step = 1e-5
        for _ in range(8):
            th = rng.dirichlet(np.ones(d))
            g = np.empty(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = step
                g[j] = (self.Phi(th + e) - self.Phi(th - e)) / (2 * step)
            if np.abs(g - self.base.f(th)).max() > 1e-6:
                raise ValueError(
                    "Phi is not a potential for the model's coupling "
                    f"(gradient mismatch {np.abs(g - self.base.f(th)).max():.2e})")

    @property
    def d(self):
        return self.base.d

    @property
    def affine(self):
        return self.base.coupling.affine


def potential_from_affine(coupling, terminal_cost=None):
    """Potential model for an affine coupling f = A theta + b (A symmetric).

    Phi(theta) = theta . A theta / 2 + b . theta.
    """
    A, b = coupling.affine
    if np.abs(A - A.T).max() > 1e-12:
        raise ValueError("affine coupling needs symmetric A to be a gradient")
    base = QuadraticCost(coupling, terminal_cost=terminal_cost)
    return PotentialModel(base, lambda th: 0.5 * float(th @ A @ th) + float(b @ th))


def hamiltonian_H(pm, u, theta):
    """H(u, theta) = sum_i theta^i htilde(Delta_i u, i) + F(theta)."""
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    htil = np.array([pm.base.htilde(u, i) for i in range(pm.d)])
    return float(theta @ htil) + float(pm.Phi(theta))


def legendre_Fstar(pm, q, method=None, span=None):
    """F*(q) = sup_p -q.p - F(p).

    Affine-coupling models use the closed form; otherwise a concave
    maximization starting from p = -q (raises ``LegendreError`` when the
    optimizer reports failure).
    """
    q = np.asarray(q, dtype=float)
    if method is None:
        method = "closed" if pm.affine is not None else "numeric"
    if method == "closed":
        A, b = pm.affine
        p, *_ = np.linalg.lstsq(A, -(q + b), rcond=None)
        if np.abs(A @ p + q + b).max() > 1e-9 * max(1.0, float(np.abs(q).max())):
            raise LegendreError("transform is infinite: q + b outside range(A)")
        return float(-q @ p - (0.5 * p @ A @ p + b @ p))
    neg = lambda p: float(q @ p) + float(pm.Phi(p))
    res = sp_optimize.minimize(neg, -q, method="Nelder-Mead",
                               options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    if not res.success:
        raise LegendreError(f"Legendre maximization failed: {res.message}")
    return float(-res.fun)


def action(pm, u_traj):
    """Trapezoidal quadrature of F*(du/dt + htilde(Delta u, .)) on the grid.

    du/dt is the second-order central difference (one-sided at the ends).
    """
    vals = u_traj.values
    grid = u_traj.grid
    dt = grid.dt
    K = grid.M + 1
    dots = np.empty_like(vals)
    dots[1:-1] = (vals[2:] - vals[:-2]) / (2 * dt)
    dots[0] = (-3 * vals[0] + 4 * vals[1] - vals[2]) / (2 * dt)
    dots[-1] = (3 * vals[-1] - 4 * vals[-2] + vals[-3]) / (2 * dt)
    integrand = np.empty(K)
    for k in range(K):
        htil = np.array([pm.base.htilde(vals[k], i) for i in range(pm.d)])
        integrand[k] = legendre_Fstar(pm, dots[k] + htil)
    return float(np.trapezoid(integrand, dx=dt))


@dataclass
class CriticalityProbe:
    epsilon: float
    directional: list  # |action(u + eps eta) - action(u - eps eta)| / (2 eps) per direction
    worst: float


def criticality_probe(pm, solution, n_directions=20, epsilon=1e-3, seed=0):
    """First-variation estimate under interior perturbations.

    Directions are sin(k pi t / T) profiles times random unit vectors; they
    vanish at both endpoints, which kills the boundary term of the first
    variation, so the directional derivative should be O(dt^2) small along
    an equilibrium.  Only interior perturbations are probed (the admissible
    class at the boundary is not pinned down by the variational principle).
    """
    from .core import Trajectory
    rng = np.random.default_rng(seed)
    grid = solution.grid
    t = grid.nodes / grid.T
    base = action(pm, solution.u)
    deriv = []
    for m in range(n_directions):
        vec = rng.standard_normal(pm.d)
        vec /= np.linalg.norm(vec)
        mode = np.sin((1 + m % 3) * math.pi * t)
        eta = np.outer(mode, vec)
        up = Trajectory(grid, solution.u.values + epsilon * eta)
        dn = Trajectory(grid, solution.u.values - epsilon * eta)
        deriv.append(abs(action(pm, up) - action(pm, dn)) / (2 * epsilon))
    return CriticalityProbe(epsilon, deriv, max(deriv))


def hamilton_residuals(pm, solution, fd_step=1e-6):
    """Defects of Hamilton's equations along a solution.

    Central-difference time derivatives against finite-difference partials
    of H; returns the worst absolute defect over interior nodes.
    """
    grid = solution.grid
    th = solution.theta.values
    uu = solution.u.values
    dt = grid.dt
    d = pm.d
    worst = 0.0
    for k in range(1, grid.M):
        tdot = (th[k + 1] - th[k - 1]) / (2 * dt)
        udot = (uu[k + 1] - uu[k - 1]) / (2 * dt)
        for j in range(d):
            e = np.zeros(d)
            e[j] = fd_step
            dH_du = (hamiltonian_H(pm, uu[k] + e, th[k])
                     - hamiltonian_H(pm, uu[k] - e, th[k])) / (2 * fd_step)
            dH_dth = (hamiltonian_H(pm, uu[k], th[k] + e)
                      - hamiltonian_H(pm, uu[k], th[k] - e)) / (2 * fd_step)
            worst = max(worst, abs(dH_du - tdot[j]), abs(dH_dth + udot[j]))
    return worst


def conservation_drift(pm, solution, stride=1):
    """max_t |H(u(t), theta(t)) - H(u(0), theta(0))| over the grid nodes."""
    th = solution.theta.values
    uu = solution.u.values
    H0 = hamiltonian_H(pm, uu[0], th[0])
    drift = 0.0
    for k in range(0, th.shape[0], stride):
        drift = max(drift, abs(hamiltonian_H(pm, uu[k], th[k]) - H0))
    return drift


def master_field(model, theta, t, T, psi=None, grid_M=1000, **solve_opts):
    """U^i(theta, t): value at time t of the equilibrium started there.

    Computed by characteristics: solve the game on [t, T] from ``theta``
    and read the value at its initial time.  ``psi`` overrides the model's
    terminal cost.  At t = T this is psi(theta) exactly.
    """
    theta = as_simplex(theta)
    work = model
    if psi is not None:
        from .mfg import _with_psi
        work = _with_psi(model, psi)
    if abs(T - t) <= 1e-15 * max(1.0, abs(T)):
        return work.psi(theta)
    if t > T:
        raise ValueError(f"query time {t} past the horizon {T}")
    grid = TimeGrid(T - t, grid_M)
    sol = solve_mfg(work, theta, grid, **solve_opts)
    return sol.u.values[0].copy()


def solve_planning(model, theta0, thetaT, T, grid_M=1000, tol=1e-6,
                   max_iter=40, initial=None, solver_opts=None):
    """Find a constant terminal value steering theta0 to thetaT.

    Shoots on psi_hat in R^d with the gauge psi_hat[d-1] = 0 (constants do
    not move the control), solving the plain initial-terminal problem per
    candidate and Newton-iterating the map psi_hat -> theta(T) with a
    finite-difference Jacobian.  Raises ``PlanningError`` with the best
    attained gap when the target is not reached (reachability is not
    guaranteed).
    """
    theta0 = as_simplex(theta0)
    thetaT = as_simplex(thetaT)
    d = model.d
    grid = TimeGrid(T, grid_M)
    solver_opts = dict(solver_opts or {})
    from .mfg import _with_psi

    def shoot(v):
        psi_hat = np.concatenate([v, [0.0]])
        work = _with_psi(model, lambda th, vec=psi_hat: vec.copy())
        sol = solve_mfg(work, theta0, grid, **solver_opts)
        return sol, sol.theta.values[-1]

    v = np.zeros(d - 1) if initial is None else np.asarray(initial, dtype=float)[:d - 1]
    best = None
    fd = 1e-6
    for it in range(max_iter):
        sol, thT = shoot(v)
        gap = float(np.abs(thT - thetaT).max())
        if best is None or gap < best[0]:
            best = (gap, v.copy(), sol)
        if gap <= tol:
            return PlanningResult(sol, np.concatenate([v, [0.0]]), gap, it)
        G = (thT - thetaT)[:d - 1]
        J = np.empty((d - 1, d - 1))
        for j in range(d - 1):
            e = np.zeros(d - 1)
            e[j] = fd
            _, up = shoot(v + e)
            _, dn = shoot(v - e)
            J[:, j] = (up - dn)[:d - 1] / (2 * fd)
        try:
            step = np.linalg.solve(J, -G)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(J, -G, rcond=None)[0]
        lam = 1.0
        while lam > 1e-6:
            _, thT_new = shoot(v + lam * step)
            if float(np.abs(thT_new - thetaT).max()) < gap:
                break
            lam *= 0.5
        else:
            raise PlanningError(
                f"shooting stagnated at terminal gap {best[0]:.3e}",
                best_gap=best[0], terminal_value=np.concatenate([best[1], [0.0]]))
        v = v + lam * step
    raise PlanningError(
        f"planning did not reach the target in {max_iter} iterations "
        f"(best gap {best[0]:.3e})", best_gap=best[0],
        terminal_value=np.concatenate([best[1], [0.0]]))


@dataclass
class PlanningResult:
    solution: MfgSolution
    terminal_value: np.ndarray  # the found psi_hat, gauge psi_hat[d-1] = 0
    terminal_gap: float
    iterations: int


def gradient_form_asymmetry(model, theta, t, T, psi=None, fd_step=1e-4,
                            grid_M=200, **solve_opts):
    """Identity check: for gradient-form terminal data the master field stays
    a gradient in theta, so its tangential Jacobian is symmetric.

    Probes the simplex-tangent directions e_j - e_d at one point and returns
    the worst antisymmetric part v_a . (DU) v_b - v_b . (DU) v_a of the
    finite-difference Jacobian.  Vacuous for d = 2 (a single tangent
    direction); no PDE grid is involved, only characteristics.
    """
    theta = as_simplex(theta)
    d = model.d
    if d < 3:
        return 0.0
    tangents = [np.eye(d)[j] - np.eye(d)[d - 1] for j in range(d - 1)]

    def U(th):
        return master_field(model, th, t, T, psi=psi, grid_M=grid_M,
                            **solve_opts)

    cols = []
    for v in tangents:
        up = U(theta + fd_step * v)
        dn = U(theta - fd_step * v)
        cols.append((up - dn) / (2 * fd_step))  # directional derivative of U
    worst = 0.0
    for a in range(len(tangents)):
        for b in range(a + 1, len(tangents)):
            # D_va (U . vb) vs D_vb (U . va)
            lhs = float(cols[a] @ tangents[b])
            rhs = float(cols[b] @ tangents[a])
            worst = max(worst, abs(lhs - rhs))
    return worst
