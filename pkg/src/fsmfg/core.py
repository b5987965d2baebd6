"""Shared numerical foundations.

Probability-simplex vectors, the quotient (sharp) norm, the per-state
difference operator, uniform time grids with interpolating trajectories,
dense enumeration of integer occupancy states, and a fixed-step classical
Runge-Kutta integrator used by every solver in the package.

State indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SIMPLEX_NEG_TOL = 1e-12
SIMPLEX_SUM_TOL = 1e-10

# enumerate_states refuses occupancy spaces larger than this by default
STATE_SPACE_CAP = 2_000_000


class SimplexError(ValueError):
    """A vector failed the probability-simplex invariants."""


class StateSpaceTooLarge(ValueError):
    """The requested occupancy state space exceeds the configured cap."""


class IntegrationError(RuntimeError):
    """Non-finite state encountered during an ODE solve."""

    def __init__(self, message, node=None, state=None):
        super().__init__(message)
        self.node = node
        self.state = state


def as_simplex(theta, neg_tol=SIMPLEX_NEG_TOL, sum_tol=SIMPLEX_SUM_TOL):
    """Validate ``theta`` as a probability vector and return a clean copy.

    Entries in [-neg_tol, 0) are treated as integrator drift: clipped to 0
    and the vector renormalized.  Anything worse raises ``SimplexError``.
    """
    v = np.asarray(theta, dtype=float).copy()
    if v.ndim != 1 or v.size < 2:
        raise SimplexError(f"simplex vector must be 1-d with d >= 2, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise SimplexError("simplex vector has non-finite entries")
    if np.any(v < -neg_tol):
        raise SimplexError(f"negative entry {v.min():.3e} below tolerance -{neg_tol:.1e}")
    s = v.sum()
    if abs(s - 1.0) > sum_tol:
        raise SimplexError(f"entries sum to {s!r}, not 1 within {sum_tol:.1e}")
    np.clip(v, 0.0, None, out=v)
    v /= v.sum()
    return v


def sharp_norm(v):
    """Quotient norm on R^d modulo constants: (max - min)/2."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("sharp_norm requires finite entries")
    return 0.5 * (float(v.max()) - float(v.min()))


def delta(i, z):
    """Difference operator at state ``i``: component j is z[j] - z[i]."""
    z = np.asarray(z, dtype=float)
    if not 0 <= i < z.shape[-1]:
        raise IndexError(f"state index {i} out of range for d={z.shape[-1]}")
    return z - z[..., i, None] if z.ndim > 1 else z - z[i]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_M = T."""

    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be positive and finite, got {self.T}")
        if self.M < 1:
            raise ValueError(f"step count must be >= 1, got {self.M}")

    @property
    def dt(self):
        return self.T / self.M

    @property
    def nodes(self):
        return np.linspace(0.0, self.T, self.M + 1)

    def locate(self, t):
        """Return (k, w) with t = (1-w) t_k + w t_{k+1}, clamped to [0, T]."""
        x = min(max(t / self.dt, 0.0), float(self.M))
        k = min(int(x), self.M - 1)
        return k, x - k


class Trajectory:
    """Time-gridded values with linear interpolation between nodes.

    ``values`` has one row per grid node.  Solvers may attach ``derivs``
    (the ODE right-hand side at the nodes), which enables the cubic-Hermite
    queries they need internally; the public ``at`` stays linear.
    """

    def __init__(self, grid, values, derivs=None):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.M + 1:
            raise ValueError(f"expected {grid.M + 1} rows, got {values.shape[0]}")
        self.grid = grid
        self.values = values
        self.values.setflags(write=False)
        if derivs is not None:
            derivs = np.asarray(derivs, dtype=float)
            if derivs.shape != values.shape:
                raise ValueError("derivs shape must match values")
            derivs.setflags(write=False)
        self.derivs = derivs

    @property
    def d(self):
        return self.values.shape[1]

    def at(self, t):
        """Linear interpolation of the stored nodes."""
        k, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[k].copy()
        return (1.0 - w) * self.values[k] + w * self.values[k + 1]

    def at_dense(self, t):
        """Cubic-Hermite interpolation when node derivatives are stored.

        Falls back to linear interpolation otherwise.  Used by the coupled
        solvers at Runge-Kutta stage times to keep fourth-order accuracy.
        """
        if self.derivs is None:
            return self.at(t)
        k, w = self.grid.locate(t)
        if w == 0.0:
            return self.values[k].copy()
        h = self.grid.dt
        y0, y1 = self.values[k], self.values[k + 1]
        d0, d1 = self.derivs[k], self.derivs[k + 1]
        w2 = w * w
        w3 = w2 * w
        return ((2 * w3 - 3 * w2 + 1) * y0 + (w3 - 2 * w2 + w) * h * d0
                + (-2 * w3 + 3 * w2) * y1 + (w3 - w2) * h * d1)


def _binomial_table(n_max, k_max):
    c = np.zeros((n_max + 1, k_max + 1), dtype=np.int64)
    c[:, 0] = 1
    for n in range(1, n_max + 1):
        for k in range(1, min(n, k_max) + 1):
            c[n, k] = c[n - 1, k - 1] + c[n - 1, k]
    return c


class StateIndexer:
    """Bijection between occupancy vectors n (sum N, d parts) and 0..S-1.

    Enumeration is lexicographic with the first coordinate largest first,
    e.g. d=2, N=2 gives (2,0), (1,1), (0,2).  ``neighbor_table`` resolves
    single-player moves n + e_j - e_k.
    """

    def __init__(self, d, N):
        if d < 2:
            raise ValueError(f"need d >= 2 states, got {d}")
        if N < 1:
            raise ValueError(f"need N >= 1 players, got {N}")
        self.d = d
        self.N = N
        self._binom = _binomial_table(N + d, d)
        self.size = int(self._binom[N + d - 1, d - 1])
        self.states = self._enumerate()
        self.states.setflags(write=False)
        self._nbr = None

    def _enumerate(self):
        d, N = self.d, self.N
        out = np.empty((self.size, d), dtype=np.int64)
        n = np.zeros(d, dtype=np.int64)
        pos = 0

        def rec(coord, remaining):
            nonlocal pos
            if coord == d - 1:
                n[coord] = remaining
                out[pos] = n
                pos += 1
                return
            for v in range(remaining, -1, -1):
                n[coord] = v
                rec(coord + 1, remaining - v)

        rec(0, N)
        return out

    def index_of(self, n):
        """Rank of occupancy vector ``n`` in the enumeration."""
        n = np.asarray(n, dtype=np.int64)
        if n.shape != (self.d,) or n.min() < 0 or n.sum() != self.N:
            raise ValueError(f"not a valid occupancy vector for (d={self.d}, N={self.N}): {n}")
        rank = 0
        remaining = self.N
        for coord in range(self.d - 1):
            parts = self.d - coord
            v = int(n[coord])
            # states whose current coordinate exceeds v come first
            if v < remaining:
                rank += int(self._binom[remaining - v - 1 + parts - 1, parts - 1])
            remaining -= v
        return rank

    def state_of(self, idx):
        return self.states[idx].copy()

    def neighbor_table(self):
        """nbr[s, j, k] = index of n_s + e_j - e_k, or -1 when n_s[k] = 0.

        Diagonal j = k maps to s itself.
        """
        if self._nbr is not None:
            return self._nbr
        d, S = self.d, self.size
        nbr = np.full((S, d, d), -1, dtype=np.int64)
        for s in range(S):
            n = self.states[s]
            for k in range(d):
                if n[k] == 0:
                    continue
                for j in range(d):
                    if j == k:
                        nbr[s, j, k] = s
                        continue
                    m = n.copy()
                    m[j] += 1
                    m[k] -= 1
                    nbr[s, j, k] = self.index_of(m)
        nbr.setflags(write=False)
        self._nbr = nbr
        return nbr


def enumerate_states(d, N, cap=STATE_SPACE_CAP):
    """Dense lexicographic enumeration of the occupancy space.

    Raises ``StateSpaceTooLarge`` when binomial(N+d-1, d-1) exceeds ``cap``.
    """
    size = math.comb(N + d - 1, d - 1)
    if size > cap:
        raise StateSpaceTooLarge(
            f"state space too large: binomial({N + d - 1},{d - 1}) = {size} > cap {cap}")
    return StateIndexer(d, N)


def integrate(field, y0, grid, direction="forward"):
    """Classical fourth-order Runge-Kutta with fixed step T/M.

    ``field(t, y)`` is the right-hand side.  Forward solves carry initial
    data at t_0; backward solves carry terminal data at t_M and integrate
    the time-reversed system.  The returned trajectory stores the field
    values at the nodes alongside the states.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    y0 = np.asarray(y0, dtype=float)
    M = grid.M
    h = grid.dt if direction == "forward" else -grid.dt
    nodes = grid.nodes
    order = range(M) if direction == "forward" else range(M, 0, -1)

    values = np.empty((M + 1,) + y0.shape, dtype=float)
    derivs = np.empty_like(values)
    start = 0 if direction == "forward" else M
    values[start] = y0
    derivs[start] = field(nodes[start], y0)
    _check_finite(values[start], start)

    y = y0.copy()
    for k in order:
        t = nodes[k]
        k1 = derivs[k]
        k2 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k1))
        k3 = np.asarray(field(t + 0.5 * h, y + 0.5 * h * k2))
        k4 = np.asarray(field(t + h, y + h * k3))
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nxt = k + 1 if direction == "forward" else k - 1
        _check_finite(y, nxt)
        values[nxt] = y
        derivs[nxt] = field(nodes[nxt], y)
    return Trajectory(grid, values, derivs)


def _check_finite(y, node):
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state at node {node}", node=node, state=y)
