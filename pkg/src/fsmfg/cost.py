"""Cost models and the generalized Legendre transform.

A cost model bundles the running cost c(i, theta, alpha), the terminal
cost psi(theta), and convexity/Lipschitz constants.  The Hamiltonian

    h(z, theta, i) = min_{mu >= 0, mu_i free}  c(i, theta, mu) + mu . (z - z_i)

and its minimizer alpha* are evaluated through closed forms when the model
provides them (the quadratic family does) and through projected gradient
descent on the box [0, alpha_cap]^(d-1) otherwise.  The minimizing control
gets its diagonal entry set to minus the off-diagonal sum, so every alpha*
is an admissible transition-rate row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import delta

DEFAULT_ALPHA_CAP = 1e3
PG_TOL = 1e-10
PG_MAX_ITER = 10_000


class ControlSolveError(RuntimeError):
    """The numeric minimizer failed to converge."""

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class Coupling:
    """Mean-field coupling f: simplex -> R^d, optionally affine.

    ``affine`` holds (A, b) with f(theta) = A theta + b when the coupling
    is affine; the compiled kernels require this form.
    """

    def __init__(self, d, fn, affine=None, name="custom"):
        self.d = d
        self._fn = fn
        self.affine = affine
        self.name = name

    def __call__(self, theta):
        out = np.asarray(self._fn(np.asarray(theta, dtype=float)), dtype=float)
        if out.shape != (self.d,):
            raise ValueError(f"coupling must return shape ({self.d},), got {out.shape}")
        return out


def coupling_self(d):
    """f^i(theta) = theta^i, the gradient of Phi(theta) = sum theta_i^2 / 2."""
    eye = np.eye(d)
    return Coupling(d, lambda th: th.copy(), affine=(eye, np.zeros(d)), name="self")


def coupling_affine(A, b=None):
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError("A must be square")
    b = np.zeros(d) if b is None else np.asarray(b, dtype=float)
    return Coupling(d, lambda th: A @ th + b, affine=(A, b), name="affine")


def coupling_zero(d):
    return Coupling(d, lambda th: np.zeros(d), affine=(np.zeros((d, d)), np.zeros(d)), name="zero")


def coupling_gradient(Phi, d, step=1e-6):
    """f = grad Phi by central finite differences, for convex scalar Phi."""

    def fn(theta):
        g = np.empty(d)
        for j in range(d):
            e = np.zeros(d)
            e[j] = step
            g[j] = (Phi(theta + e) - Phi(theta - e)) / (2.0 * step)
        return g

    return Coupling(d, fn, name="grad")


def psi_zero(d):
    return lambda theta: np.zeros(d)


def psi_linear(d):
    """psi^i(theta) = theta^i (monotone: gradient of a convex quadratic)."""
    return lambda theta: np.asarray(theta, dtype=float).copy()


def psi_affine(A, b=None):
    A = np.asarray(A, dtype=float)
    b = np.zeros(A.shape[0]) if b is None else np.asarray(b, dtype=float)
    return lambda theta: A @ np.asarray(theta, dtype=float) + b


class CostModel:
    """Running/terminal costs plus the constants the audits check against.

    Parameters
    ----------
    d : number of states.
    running_cost : c(i, theta, alpha) -> float; must not depend on alpha[i]
        and be uniformly convex in the off-diagonal coordinates.
    terminal_cost : psi(theta) -> (d,) array.
    gamma : uniform convexity constant of c in alpha.
    lip_c : Lipschitz constant of c in theta (uniform in alpha).
    lip_grad_c : Lipschitz constant of grad_alpha c in theta.
    alpha_cap : box bound for the numeric minimizer.
    grad_alpha : optional analytic (i, theta, alpha) -> (d,) gradient;
        finite differences otherwise.
    """

    def __init__(self, d, running_cost, terminal_cost, gamma, lip_c=1.0,
                 lip_grad_c=1.0, alpha_cap=DEFAULT_ALPHA_CAP, grad_alpha=None):
        if d < 2:
            raise ValueError("need d >= 2 states")
        if gamma <= 0:
            raise ValueError("uniform convexity constant must be positive")
        self.d = d
        self.running_cost = running_cost
        self.terminal_cost = terminal_cost
        self.gamma = gamma
        self.lip_c = lip_c
        self.lip_grad_c = lip_grad_c
        self.alpha_cap = alpha_cap
        self.grad_alpha = grad_alpha

    # subclasses with closed forms override these with callables
    closed_hamiltonian = None
    closed_control = None

    @property
    def coupling(self):
        return None

    def psi(self, theta):
        return np.asarray(self.terminal_cost(np.asarray(theta, dtype=float)), dtype=float)


class QuadraticCost(CostModel):
    """The quadratic family c(i, theta, alpha) = sum_{j != i} alpha_j^2 / 2 + f^i(theta).

    Carries exact closed forms: alpha*_j = (z_i - z_j)^+ for j != i and

        h(z, theta, i) = f^i(theta) - (1/2) sum_j [(z_i - z_j)^+]^2.
    """

    def __init__(self, coupling, terminal_cost=None, alpha_cap=DEFAULT_ALPHA_CAP):
        d = coupling.d
        self._coupling = coupling
        if terminal_cost is None:
            terminal_cost = psi_zero(d)

        def running_cost(i, theta, alpha):
            alpha = np.asarray(alpha, dtype=float)
            off = np.delete(alpha, i)
            return 0.5 * float(off @ off) + float(coupling(theta)[i])

        def grad_alpha(i, theta, alpha):
            g = np.asarray(alpha, dtype=float).copy()
            g[i] = 0.0
            return g

        super().__init__(d, running_cost, terminal_cost, gamma=0.5,
                         lip_c=self._coupling_lip(), lip_grad_c=0.0,
                         alpha_cap=alpha_cap, grad_alpha=grad_alpha)

    def _coupling_lip(self):
        if self._coupling.affine is not None:
            A, _ = self._coupling.affine
            return float(np.linalg.norm(A, 2))
        return 1.0

    @property
    def coupling(self):
        return self._coupling

    def f(self, theta):
        return self._coupling(theta)

    def closed_control(self, z, theta, i):
        z = np.asarray(z, dtype=float)
        a = np.clip(z[i] - z, 0.0, None)
        a[i] = 0.0
        a[i] = -a.sum()
        return a

    def closed_hamiltonian(self, z, theta, i):
        z = np.asarray(z, dtype=float)
        pos = np.clip(z[i] - z, 0.0, None)
        pos[i] = 0.0
        return float(self._coupling(theta)[i]) - 0.5 * float(pos @ pos)

    def htilde(self, z, i):
        """theta-free part of the Hamiltonian (separated form)."""
        z = np.asarray(z, dtype=float)
        pos = np.clip(z[i] - z, 0.0, None)
        pos[i] = 0.0
        return -0.5 * float(pos @ pos)

    def strip_closed_forms(self):
        """A behaviorally identical model forced onto the numeric path."""
        return CostModel(self.d, self.running_cost, self.terminal_cost,
                         gamma=self.gamma, lip_c=self.lip_c, lip_grad_c=self.lip_grad_c,
                         alpha_cap=self.alpha_cap, grad_alpha=None)


def _embed(mu, i, d):
    alpha = np.zeros(d)
    alpha[np.arange(d) != i] = mu
    return alpha


def _numeric_argmin(model, pz_off, theta, i, tol=PG_TOL, max_iter=PG_MAX_ITER):
    """Projected gradient with backtracking on [0, alpha_cap]^(d-1).

    Minimizes c(i, theta, mu) + mu . pz_off over the off-diagonal
    coordinates.  The objective is uniformly convex, so the scheme
    converges linearly; the finite-difference gradient keeps the user
    interface first-order only.
    """
    d = model.d
    cap = model.alpha_cap
    fd_step = 6e-6

    def obj(mu):
        return model.running_cost(i, theta, _embed(mu, i, d)) + float(mu @ pz_off)

    def grad(mu):
        if model.grad_alpha is not None:
            g = np.asarray(model.grad_alpha(i, theta, _embed(mu, i, d)), dtype=float)
            return np.delete(g, i) + pz_off
        g = np.empty(d - 1)
        for j in range(d - 1):
            e = np.zeros(d - 1)
            e[j] = fd_step
            g[j] = (obj(mu + e) - obj(mu - e)) / (2.0 * fd_step)
        return g

    mu = np.zeros(d - 1)
    val = obj(mu)
    step = 1.0
    eps = np.finfo(float).eps
    for _ in range(max_iter):
        g = grad(mu)
        pgnorm = float(np.abs(mu - np.clip(mu - g, 0.0, cap)).max())
        # finite-difference gradients cannot resolve below their roundoff floor
        floor = 0.0 if model.grad_alpha is not None else \
            4.0 * eps * (1.0 + abs(val)) / fd_step
        if pgnorm <= max(tol, floor):
            return mu, val
        step = min(step * 2.0, 1e6)
        while True:
            cand = np.clip(mu - step * g, 0.0, cap)
            cval = obj(cand)
            if cval <= val + 1e-4 * float(g @ (cand - mu)) or step < 1e-14:
                break
            step *= 0.5
        if step < 1e-14:
            raise ControlSolveError(
                f"projected gradient stalled (grad norm {pgnorm:.3e})",
                last_iterate=_embed(mu, i, d), grad_norm=pgnorm)
        mu, val = cand, cval
    pgnorm = float(np.abs(mu - np.clip(mu - grad(mu), 0.0, cap)).max())
    raise ControlSolveError(
        f"projected gradient did not converge in {max_iter} iterations "
        f"(projected gradient norm {pgnorm:.3e})",
        last_iterate=_embed(mu, i, d), grad_norm=pgnorm)


def optimal_control(model, z, theta, i, tol=PG_TOL):
    """Minimizing rate vector alpha*(z, theta, i); diagonal = -sum of the rest."""
    z = np.asarray(z, dtype=float)
    if not 0 <= i < model.d:
        raise IndexError(f"state index {i} out of range for d={model.d}")
    if model.closed_control is not None:
        return np.asarray(model.closed_control(z, theta, i), dtype=float)
    pz_off = np.delete(delta(i, z), i)
    mu, _ = _numeric_argmin(model, pz_off, theta, i, tol=tol)
    alpha = _embed(mu, i, model.d)
    alpha[i] = -mu.sum()
    return alpha


def hamiltonian(model, z, theta, i, tol=PG_TOL):
    """Generalized Legendre transform h(z, theta, i); depends on z only through
    its differences against z_i."""
    z = np.asarray(z, dtype=float)
    if not 0 <= i < model.d:
        raise IndexError(f"state index {i} out of range for d={model.d}")
    if model.closed_hamiltonian is not None:
        return float(model.closed_hamiltonian(z, theta, i))
    pz_off = np.delete(delta(i, z), i)
    _, val = _numeric_argmin(model, pz_off, theta, i, tol=tol)
    return float(val)


def hamiltonian_vector(model, z, theta):
    """(h(z, theta, 1), ..., h(z, theta, d)) as an array."""
    return np.array([hamiltonian(model, z, theta, i) for i in range(model.d)])


def superdifferential_check(model, z, v, theta, i, slack=1e-8):
    """True iff h(z+v) - h(z) <= alpha*(z) . v up to ``slack``."""
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    lhs = hamiltonian(model, z + v, theta, i) - hamiltonian(model, z, theta, i)
    rhs = float(optimal_control(model, z, theta, i) @ v)
    return lhs <= rhs + slack


@dataclass
class ModelSpotCheck:
    own_coordinate_free: bool  # c must not depend on alpha_i
    convexity_ok: bool         # sampled uniform-convexity inequality
    worst_convexity_slack: float
    psi_lipschitz_ratio: float

    @property
    def ok(self):
        return self.own_coordinate_free and self.convexity_ok


def spot_check_model(model, samples=100, seed=0, alpha_scale=1.0):
    """Sampled validation of the cost-model contract.

    Checks that perturbing the own-state rate coordinate leaves c unchanged,
    that the uniform-convexity inequality holds with the declared gamma on
    sampled control pairs, and reports the worst sampled Lipschitz ratio of
    the terminal cost in theta.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    own_free = True
    conv_ok = True
    worst_slack = -np.inf
    psi_ratio = 0.0
    for _ in range(samples):
        i = int(rng.integers(d))
        theta = rng.dirichlet(np.ones(d))
        off = np.arange(d) != i
        a = np.zeros(d)
        a[off] = alpha_scale * rng.uniform(0, 2, d - 1)
        b = a.copy()
        b[i] += rng.standard_normal() * 10.0
        if abs(model.running_cost(i, theta, a) - model.running_cost(i, theta, b)) > 1e-12:
            own_free = False
        a2 = np.zeros(d)
        a2[off] = alpha_scale * rng.uniform(0, 2, d - 1)
        if np.allclose(a2[off], a[off]):
            continue
        if model.grad_alpha is not None:
            g = np.asarray(model.grad_alpha(i, theta, a), dtype=float)
        else:
            g = np.zeros(d)
            for j in range(d):
                if j == i:
                    continue
                e = np.zeros(d)
                e[j] = 1e-6
                g[j] = (model.running_cost(i, theta, a + e)
                        - model.running_cost(i, theta, a - e)) / 2e-6
        lhs = model.running_cost(i, theta, a2) - model.running_cost(i, theta, a)
        rhs = float(g[off] @ (a2 - a)[off]) + model.gamma * float(
            np.sum((a2 - a)[off] ** 2))
        slack = rhs - lhs  # <= 0 when the inequality holds
        worst_slack = max(worst_slack, slack)
        if slack > 1e-8 * max(1.0, abs(lhs)):
            conv_ok = False
        theta2 = rng.dirichlet(np.ones(d))
        dth = float(np.linalg.norm(theta2 - theta))
        if dth > 1e-9:
            dpsi = float(np.linalg.norm(model.psi(theta2) - model.psi(theta)))
            psi_ratio = max(psi_ratio, dpsi / dth)
    return ModelSpotCheck(own_free, conv_ok, worst_slack, psi_ratio)


@dataclass
class LipschitzReport:
    samples: int
    max_p_ratio: float
    p_bound: float
    max_theta_ratio: float
    theta_bound: float
    p_violations: int
    theta_violations: int
    cap_hits: int

    @property
    def ok(self):
        return self.p_violations == 0 and self.theta_violations == 0


def lipschitz_audit(model, samples, seed=0, z_scale=1.0, slack=0.01):
    """Sampled check of the control's Lipschitz bounds 1/gamma and K_c/gamma.

    Ratios are measured in the Euclidean norm over the off-diagonal control
    coordinates (the diagonal is a dependent quantity).  A ratio more than
    ``slack`` above its bound counts as a violation.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    d = model.d
    p_bound = 1.0 / model.gamma
    theta_bound = model.lip_grad_c / model.gamma
    max_p = 0.0
    max_t = 0.0
    p_viol = 0
    t_viol = 0
    cap_hits = 0
    for _ in range(samples):
        i = int(rng.integers(d))
        theta = rng.dirichlet(np.ones(d))
        theta2 = rng.dirichlet(np.ones(d))
        z = z_scale * rng.standard_normal(d)
        z2 = z_scale * rng.standard_normal(d)
        a = optimal_control(model, z, theta, i)
        a2 = optimal_control(model, z2, theta, i)
        a3 = optimal_control(model, z, theta2, i)
        off = np.arange(d) != i
        if np.any(np.abs(a[off]) >= model.alpha_cap * (1 - 1e-9)):
            cap_hits += 1
        dp = np.linalg.norm(delta(i, z2) - delta(i, z))
        if dp > 1e-9:
            r = float(np.linalg.norm((a2 - a)[off])) / dp
            max_p = max(max_p, r)
            if r > p_bound * (1 + slack):
                p_viol += 1
        dth = np.linalg.norm(theta2 - theta)
        if dth > 1e-9:
            r = float(np.linalg.norm((a3 - a)[off])) / dth
            max_t = max(max_t, r)
            if r > theta_bound * (1 + slack):
                t_viol += 1
    return LipschitzReport(samples, max_p, p_bound, max_t, theta_bound,
                           p_viol, t_viol, cap_hits)


def sampled_coupling_bound(model, samples=10_000, seed=0, inflate=0.01):
    """Sampled max_i,theta |h(0, theta, i)|, inflated, vertices included.

    For the quadratic family h(0, theta, i) = f^i(theta), so this is the
    coupling bound entering both maximum principles and the contractivity
    threshold.
    """
    rng = np.random.default_rng(seed)
    d = model.d
    worst = 0.0
    pts = [np.eye(d)[j] for j in range(d)]
    pts.extend(rng.dirichlet(np.ones(d)) for _ in range(samples))
    zero = np.zeros(d)
    for theta in pts:
        for i in range(d):
            worst = max(worst, abs(hamiltonian(model, zero, theta, i)))
    return worst * (1.0 + inflate)


def contractivity_threshold(model, samples=2000, seed=0):
    """Sharp-norm level above which the quadratic family's sign conditions hold.

    From the bound |F_1| <= 2 max|f|: once ||u||_sharp^2 > d max|f| both
    contractivity inequalities are strict.
    """
    bound = sampled_coupling_bound(model, samples=samples, seed=seed)
    return float(np.sqrt(model.d * bound))


@dataclass
class ContractivityCheck:
    applicable: bool
    ok: bool
    margin: float


def check_contractive_signs(model, u, theta):
    """Evaluate the sign conditions at (u, theta) for every extreme state.

    For each i with all differences one-signed, h_i - <h> must be negative
    at a maximizing state and positive at a minimizing one.  ``applicable``
    is False when u has no one-signed state (cannot happen for finite u,
    since argmax/argmin always qualify).
    """
    u = np.asarray(u, dtype=float)
    hvec = hamiltonian_vector(model, u, theta)
    mean_h = float(hvec.mean())
    applicable = False
    ok = True
    margin = np.inf
    for i in range(model.d):
        dz = delta(i, u)
        gap = hvec[i] - mean_h
        if np.all(dz <= 0):
            applicable = True
            ok = ok and gap < 0
            margin = min(margin, -gap)
        if np.all(dz >= 0):
            applicable = True
            ok = ok and gap > 0
            margin = min(margin, gap)
    return ContractivityCheck(applicable, ok, float(margin))
