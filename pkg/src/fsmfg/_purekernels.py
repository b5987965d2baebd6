"""Pure-numpy implementations of the hot kernels.

These are the reference implementations of the quadratic-family sweeps the
compiled extension accelerates: the backward Hamilton-Jacobi solve, the
forward Kolmogorov solve, the N-player equilibrium solve, and the exact
joint-law propagation.  Signatures match ``fsmfg._fastcore`` exactly; the
active module is chosen in ``fsmfg.backend``.

Conventions: node arrays are time-major; ``theta_dot``/``u_dot`` are the
ODE right-hand sides at the nodes and enable cubic-Hermite midpoint values
(pass None for plain linear midpoints).  All controls are the quadratic
family's closed form alpha*_j = (z_i - z_j)^+.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _midpoint(y0, y1, d0, d1, h):
    """Value at the interval midpoint: cubic Hermite, or linear without slopes."""
    if d0 is None:
        return 0.5 * (y0 + y1)
    return 0.5 * (y0 + y1) + 0.125 * h * (d0 - d1)


def _quad_h(u, f):
    """h_i = f_i - 0.5 sum_j [(u_i - u_j)^+]^2 for all i at once."""
    pos = np.clip(u[:, None] - u[None, :], 0.0, None)
    return f - 0.5 * (pos * pos).sum(axis=1)


def _quad_kflow(theta, u):
    """Kolmogorov right-hand side: inflow minus outflow under alpha*(u)."""
    pos = np.clip(u[:, None] - u[None, :], 0.0, None)  # pos[j, i] = (u_j - u_i)^+
    np.fill_diagonal(pos, 0.0)
    return theta @ pos - theta * pos.sum(axis=1)


def quad_hj_backward(theta, theta_dot, A, b, uT, dt):
    """Backward RK4 sweep of -du/dt = h(Delta u, theta(t)) with affine coupling.

    theta : (M+1, d) node values of the distribution trajectory.
    theta_dot : matching slopes or None.
    A, b : coupling f(theta) = A theta + b.
    uT : (d,) terminal values.
    Returns (u, u_dot), both (M+1, d).
    """
    theta = np.asarray(theta, dtype=float)
    M = theta.shape[0] - 1
    d = theta.shape[1]
    fvals = theta @ A.T + b
    u = np.empty_like(theta)
    udot = np.empty_like(theta)
    u[M] = uT
    udot[M] = -_quad_h(uT, fvals[M])
    h = -dt
    y = np.array(uT, dtype=float)
    for k in range(M, 0, -1):
        d0 = theta_dot[k - 1] if theta_dot is not None else None
        d1 = theta_dot[k] if theta_dot is not None else None
        th_mid = _midpoint(theta[k - 1], theta[k], d0, d1, dt)
        f_mid = A @ th_mid + b
        k1 = udot[k]
        k2 = -_quad_h(y + 0.5 * h * k1, f_mid)
        k3 = -_quad_h(y + 0.5 * h * k2, f_mid)
        k4 = -_quad_h(y + h * k3, fvals[k - 1])
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u[k - 1] = y
        udot[k - 1] = -_quad_h(y, fvals[k - 1])
    return u, udot


def quad_kolmogorov_forward(u, u_dot, theta0, dt):
    """Forward RK4 sweep of the Kolmogorov equation under alpha*(u(t)).

    u : (M+1, d) value-function nodes; u_dot matching slopes or None.
    Returns (theta, theta_dot), both (M+1, d).
    """
    u = np.asarray(u, dtype=float)
    M = u.shape[0] - 1
    theta = np.empty_like(u)
    tdot = np.empty_like(u)
    y = np.array(theta0, dtype=float)
    theta[0] = y
    tdot[0] = _quad_kflow(y, u[0])
    for k in range(M):
        d0 = u_dot[k] if u_dot is not None else None
        d1 = u_dot[k + 1] if u_dot is not None else None
        u_mid = _midpoint(u[k], u[k + 1], d0, d1, dt)
        k1 = tdot[k]
        k2 = _quad_kflow(y + 0.5 * dt * k1, u_mid)
        k3 = _quad_kflow(y + 0.5 * dt * k2, u_mid)
        k4 = _quad_kflow(y + dt * k3, u[k + 1])
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        theta[k + 1] = y
        tdot[k + 1] = _quad_kflow(y, u[k + 1])
    return theta, tdot


def _npl_rhs(u, nvecs, nbr, fvals):
    """Equilibrium ODE right-hand side over the full (i, state) table.

    u : (d, S) current values.  Returns du of the same shape with

        -du[i, s] = sum_{k, j != k} n_k alpha*_j(Delta_k u at n+e_ik) *
                    (u[i, n+e_jk] - u[i, n])  +  h(Delta_i u_n, n/N, i)

    i.e. the function returned here is du/dt (note the sign).
    """
    d, S = u.shape
    rhs = np.empty_like(u)
    # h part, all (i, s) at once
    pos = np.clip(u[:, None, :] - u[None, :, :], 0.0, None)  # [i, j, s]
    hpart = fvals - 0.5 * (pos * pos).sum(axis=1)
    cpl = np.zeros_like(u)
    for k in range(d):
        nk = nvecs[:, k].astype(float)  # zero entries kill invalid gathers
        for i in range(d):
            sp = nbr[:, i, k]  # index of n + e_ik (k-perspective shift)
            uk = u[k, sp]
            for j in range(d):
                if j == k:
                    continue
                gamma = nk * np.clip(uk - u[j, sp], 0.0, None)
                tgt = nbr[:, j, k]
                cpl[i] += gamma * (u[i, tgt] - u[i])
    rhs[:] = -(cpl + hpart)
    return rhs


def quad_npl_backward(nvecs, nbr, fvals, psiT, dt, M):
    """Backward RK4 solve of the N-player equilibrium ODE.

    nvecs : (S, d) occupancy vectors; nbr : (S, d, d) neighbor indices with
    -1 for absent moves (their rates vanish, so any index is safe after the
    n_k factor; callers pass a clipped table).  fvals/psiT : (d, S) coupling
    and terminal values on the lattice.  Returns (M+1, d, S) field nodes.
    """
    d, S = fvals.shape
    field = np.empty((M + 1, d, S), dtype=float)
    field[M] = psiT
    h = -dt
    y = np.array(psiT, dtype=float)
    for k in range(M, 0, -1):
        k1 = _npl_rhs(y, nvecs, nbr, fvals)
        k2 = _npl_rhs(y + 0.5 * h * k1, nvecs, nbr, fvals)
        k3 = _npl_rhs(y + 0.5 * h * k2, nvecs, nbr, fvals)
        k4 = _npl_rhs(y + h * k3, nvecs, nbr, fvals)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        field[k - 1] = y
    return field


def _jointlaw_rhs(p, u, nvecs, nbr):
    """Master-equation right-hand side for the joint chain (i, n)."""
    d, S = p.shape
    dp = np.zeros_like(p)
    # reference-player jumps i -> j at rate alpha*_j(Delta_i u_n)
    for i in range(d):
        for j in range(d):
            if j == i:
                continue
            r = np.clip(u[i] - u[j], 0.0, None) * p[i]
            dp[j] += r
            dp[i] -= r
    # background moves n -> n + e_jk at rate n_k alpha*_j at n + e_ik
    for k in range(d):
        nk = nvecs[:, k].astype(float)
        for i in range(d):
            sp = nbr[:, i, k]
            uk = u[k, sp]
            for j in range(d):
                if j == k:
                    continue
                flow = nk * np.clip(uk - u[j, sp], 0.0, None) * p[i]
                dp[i] -= flow
                np.add.at(dp[i], nbr[:, j, k], flow)
    return dp


def quad_jointlaw_forward(field, nvecs, nbr, p0, dt):
    """Forward RK4 of the joint master equation under the stored field.

    field : (M+1, d, S) equilibrium values; rates at stage times use the
    field's linear-in-time interpolant.  Returns (M+1, d, S) probabilities.
    """
    M = field.shape[0] - 1
    law = np.empty_like(field)
    law[0] = p0
    y = np.array(p0, dtype=float)
    for k in range(M):
        u_mid = 0.5 * (field[k] + field[k + 1])
        k1 = _jointlaw_rhs(y, field[k], nvecs, nbr)
        k2 = _jointlaw_rhs(y + 0.5 * dt * k1, u_mid, nvecs, nbr)
        k3 = _jointlaw_rhs(y + 0.5 * dt * k2, u_mid, nvecs, nbr)
        k4 = _jointlaw_rhs(y + dt * k3, field[k + 1], nvecs, nbr)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        law[k + 1] = y
    return law
