"""Fixed-point map Gamma and Picard iteration for the coupled perturbation system.

The perturbations psi_p = psi - G (forward from s = 0) and eta_p = eta - G
(backward from s = t) are advanced by a Duhamel trapezoid rule around the
linearized semigroups; Gamma maps a trajectory pair to the pair generated by
the sources it induces, and the mild solution is its fixed point.
"""

from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np

from .collision import build_collision_table, nonlinearity
from .equilibria import (
    Trajectory,
    kernel_basis,
    make_equilibria,
    project_off_kernel,
    trajectory_norm,
    weighted_sup_norm,
)
from .grids import build_space_grid, build_sphere_quadrature, build_velocity_grid
from .transport import Kinetics, make_stepper, semigroup_apply, semigroup_step


class DivergenceError(RuntimeError):
    """Non-finite values appeared while applying Gamma."""


@lru_cache(maxsize=8)
def _discretization(d, R, n, m, order, rule, alpha):
    vgrid = build_velocity_grid(d, R, n)
    sgrid = build_space_grid(d, m)
    squad = build_sphere_quadrature(d, order)
    table = build_collision_table(vgrid, squad, rule)
    eqs = make_equilibria(vgrid, sgrid, alpha)
    return vgrid, sgrid, squad, table, eqs, kernel_basis(eqs), Kinetics(sgrid, vgrid, eqs, table)


@dataclass(eq=False)
class Problem:
    """Everything a solve needs, derived deterministically from a ScenarioConfig."""

    cfg: object
    vgrid: object
    sgrid: object
    squad: object
    table: object
    eqs: object
    basis: object
    kin: object
    forward: object
    backward: object
    times: np.ndarray
    psi0: np.ndarray  # pinned psi_p(0), shape (X, V)
    rho: np.ndarray  # terminal offset: g(t) = log E + rho
    eta_t: np.ndarray  # pinned eta_p(t) = e^{g(t)} B - G
    phi: np.ndarray = None  # forcing on the time grid, (N+1, X, V) or None
    checks: dict = field(default_factory=dict)

    @property
    def t(self):
        return float(self.times[-1])

    @property
    def delta(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def g_vals(self):
        return np.broadcast_to(np.exp(self.eqs.log_G), (self.sgrid.size, self.vgrid.size))

    @property
    def g_hat(self):
        """Terminal exponent g(t) as an (X, V) array."""
        return self.eqs.log_E + self.rho

    @property
    def f0(self):
        """Initial datum f^0 = (G + psi_p(0)) B."""
        return (self.g_vals + self.psi0) * np.exp(self.eqs.log_B)


def time_grid(t, delta):
    if t == 0:
        return np.zeros(1)
    nsteps = max(1, math.ceil(t / delta - 1e-9))
    return np.arange(nsteps + 1) * (t / nsteps)


def perturbation_shape(vgrid, sgrid, eqs, rng, modulation):
    """Random velocity polynomial (degree <= 4) times G, optionally modulated in x."""
    v = vgrid.nodes / 2.0
    terms = [np.ones(vgrid.size)]
    for k in range(1, 5):
        for combo in _monomials(vgrid.d, k):
            terms.append(np.prod(v ** np.array(combo), axis=1))
    coef = rng.standard_normal(len(terms))
    hv = np.exp(eqs.log_G) * (coef @ np.array(terms))
    x1 = sgrid.nodes[:, 0]
    return hv[None, :] * (1.0 + modulation * np.cos(2.0 * np.pi * x1))[:, None]


def _monomials(d, k):
    if d == 1:
        return [(k,)]
    out = []
    for a in range(k, -1, -1):
        for rest in _monomials(d - 1, k - a):
            out.append((a,) + rest)
    return out


def _normalized(h, scale, vgrid, beta):
    nrm = weighted_sup_norm(h, beta + 1, vgrid)
    return h * (scale / nrm) if nrm > 0 else h


def build_problem(cfg):
    vgrid, sgrid, squad, table, eqs, basis, kin = _discretization(
        cfg.d, cfg.R, cfg.n, cfg.m, cfg.sphere_order, cfg.collision_rule, cfg.alpha
    )
    scheme = cfg.resolved_scheme
    fwd = make_stepper(+1, cfg.delta_sub, kin, scheme)
    bwd = make_stepper(-1, cfg.delta_sub, kin, scheme)
    times = time_grid(cfg.t, cfg.delta)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    h_psi = perturbation_shape(vgrid, sgrid, eqs, rng, cfg.modulation)
    h_eta = perturbation_shape(vgrid, sgrid, eqs, rng, cfg.modulation)
    g = np.broadcast_to(np.exp(eqs.log_G), (sgrid.size, vgrid.size))

    if cfg.initial == "zero" or cfg.c == 0:
        psi0 = np.zeros_like(g)
    else:
        if cfg.initial == "projected":
            h_psi = project_off_kernel(h_psi, basis)
        psi0 = _normalized(h_psi, cfg.c, vgrid, cfg.beta)

    log_g = np.broadcast_to(eqs.log_G, g.shape)
    if cfg.terminal in ("projected", "raw") and cfg.c > 0:
        if cfg.terminal == "projected":
            h_eta = project_off_kernel(h_eta, basis)
        scale = cfg.c * (math.exp(-cfg.sigma * cfg.t) if cfg.regime == "theorem-2" else 1.0)
        target = _normalized(h_eta, scale, vgrid, cfg.beta)
        ratio = target / g
        if np.any(ratio <= -1):
            raise ValueError("terminal perturbation makes e^g B negative; reduce perturbation_scale")
        rho = np.log1p(ratio)
    elif cfg.terminal == "polynomial":
        lin = np.asarray(cfg.g_linear, dtype=float) if cfg.g_linear else np.zeros(cfg.d)
        x1 = sgrid.nodes[:, 0]
        rho = (
            cfg.g_constant
            + (vgrid.nodes @ lin)[None, :]
            + cfg.g_quadratic * vgrid.speed2[None, :]
            + cfg.g_cosine * np.cos(2.0 * np.pi * x1)[:, None]
        )
        rho = np.broadcast_to(rho, g.shape).copy()
    elif cfg.terminal == "degenerate":
        # e^g B = exp(log G + rho) = 1 exactly
        rho = -log_g.copy()
    else:
        rho = np.zeros_like(g)
    eta_t = np.exp(log_g + rho) - g

    phi = None
    if cfg.forcing == "decaying" and cfg.forcing_bound > 0:
        prof = 1.0 / (1.0 + vgrid.speed2)
        phi = 0.5 * cfg.forcing_bound * np.exp(-times)[:, None, None] * np.broadcast_to(prof, g.shape)[None]

    checks = {
        "initial_norm": float(weighted_sup_norm(psi0, cfg.beta + 1, vgrid)),
        "terminal_norm": float(weighted_sup_norm(eta_t, cfg.beta + 1, vgrid)),
        "initial_kernel_overlap": float(np.abs(basis.coefficients(psi0)).max()),
        "terminal_kernel_overlap": float(np.abs(basis.coefficients(eta_t)).max()),
    }
    return Problem(cfg, vgrid, sgrid, squad, table, eqs, basis, kin, fwd, bwd,
                   times, psi0, rho, eta_t, phi, checks)


@dataclass(eq=False)
class TrajectoryPair:
    times: np.ndarray
    psi: np.ndarray  # psi_p, shape (N+1, X, V)
    eta: np.ndarray  # eta_p

    def copy(self):
        return TrajectoryPair(self.times.copy(), self.psi.copy(), self.eta.copy())


def init_picard(prob):
    """psi_p(s) = e^{sB+} psi_p(0), eta_p(s) = e^{(t-s)B-} eta_p(t)."""
    N = len(prob.times) - 1
    psi = np.empty((N + 1,) + prob.psi0.shape)
    eta = np.empty_like(psi)
    psi[0] = prob.psi0
    eta[N] = prob.eta_t
    for n in range(N):
        dt = prob.times[n + 1] - prob.times[n]
        psi[n + 1] = semigroup_apply(psi[n], dt, prob.forward)
        eta[N - n - 1] = semigroup_apply(eta[N - n], dt, prob.backward)
    return TrajectoryPair(prob.times.copy(), psi, eta)


def gamma_sources(pair, prob):
    """Forward and backward Duhamel sources on every time node."""
    eqs, table = prob.eqs, prob.table
    g = prob.g_vals
    fplus = nonlinearity(pair.psi, pair.eta, eqs, table)
    fminus = nonlinearity(pair.eta, pair.psi, eqs, table)
    if prob.phi is not None:
        fplus = fplus - (g + pair.psi) * prob.phi
        fminus = fminus - (g + pair.eta) * prob.phi
    return fplus, fminus


def apply_gamma(pair, prob):
    N = len(prob.times) - 1
    fplus, fminus = gamma_sources(pair, prob)
    psi = np.empty_like(pair.psi)
    eta = np.empty_like(pair.eta)
    psi[0] = prob.psi0
    eta[N] = prob.eta_t
    for n in range(N):
        dt = prob.times[n + 1] - prob.times[n]
        half = 0.5 * dt
        psi[n + 1] = semigroup_step(psi[n] + half * fplus[n], dt, prob.forward) + half * fplus[n + 1]
        k = N - n
        eta[k - 1] = semigroup_step(eta[k] + half * fminus[k], dt, prob.backward) + half * fminus[k - 1]
    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(eta))):
        raise DivergenceError("non-finite values in the Gamma iterate")
    return TrajectoryPair(pair.times, psi, eta)


def regime_distance(dpsi, deta, prob):
    """(psi part, eta part) of the regime norm of a trajectory-pair difference."""
    cfg = prob.cfg
    tp = Trajectory(prob.times, dpsi)
    te = Trajectory(prob.times, deta)
    if cfg.regime == "theorem-1":
        a = trajectory_norm(tp, cfg.beta, cfg.sigma, "polynomial", False, prob.vgrid).value
        b = trajectory_norm(te, cfg.beta, cfg.sigma, "polynomial", True, prob.vgrid).value
    else:
        a = trajectory_norm(tp, cfg.beta, 0.0, "exponential", False, prob.vgrid).value
        # e^{sigma t} E^{-sigma} of the reversed trajectory = max_s e^{sigma s} |.|
        b = trajectory_norm(te, cfg.beta, cfg.sigma, "exponential", False, prob.vgrid).value
    return a, b


@dataclass(eq=False)
class CoupledSolution:
    prob: object
    pair: TrajectoryPair
    converged: bool
    iterations: int
    history: list  # rows (iterate, dpsi, deta, ratio)
    residual: float
    reason: str = ""
    min_psi: float = float("nan")
    min_eta: float = float("nan")

    @property
    def psi(self):
        return self.prob.g_vals + self.pair.psi

    @property
    def eta(self):
        return self.prob.g_vals + self.pair.eta

    @property
    def positive(self):
        return self.min_psi > 0 and self.min_eta > 0

    @property
    def ratios(self):
        return [r for (_, _, _, r) in self.history if not math.isnan(r)]


def solve_coupled(prob, initial=None, tol=None, max_iter=None):
    """Picard iteration from ``init_picard`` (or ``initial``) to the regime-norm tolerance."""
    cfg = prob.cfg
    tol = cfg.tol if tol is None else tol
    max_iter = cfg.max_iter if max_iter is None else max_iter
    pair = init_picard(prob) if initial is None else initial.copy()
    history = []
    prev = None
    converged = False
    reason = "max-iterations"
    k = 0
    try:
        for k in range(1, max_iter + 1):
            new = apply_gamma(pair, prob)
            a, b = regime_distance(new.psi - pair.psi, new.eta - pair.eta, prob)
            total = a + b
            ratio = total / prev if prev else float("nan")
            history.append((k, a, b, ratio))
            pair, prev = new, total
            if not math.isfinite(total):
                reason = "non-finite"
                break
            if total < tol:
                converged = True
                reason = ""
                break
        residual = float("nan")
        if converged:
            check = apply_gamma(pair, prob)
            residual = sum(regime_distance(check.psi - pair.psi, check.eta - pair.eta, prob))
    except DivergenceError as exc:
        reason = str(exc)
        residual = float("nan")
    sol = CoupledSolution(prob, pair, converged, k, history, residual, reason)
    if np.all(np.isfinite(pair.psi)) and np.all(np.isfinite(pair.eta)):
        sol.min_psi = float(sol.psi.min())
        sol.min_eta = float(sol.eta.min())
    return sol


def to_physical_variables(sol):
    """(phi, p) trajectories with p = log eta + alpha' |v|^2 and phi = psi eta."""
    eta = sol.eta
    bad = np.argwhere(eta <= 0)
    if len(bad):
        n, x, v = bad[0]
        raise ValueError(f"eta is not positive at time node {n}, space node {x}, velocity node {v}")
    ap = sol.prob.eqs.alpha_prime
    p = np.log(eta) + ap * sol.prob.vgrid.speed2
    phi = sol.psi * eta
    return Trajectory(sol.prob.times, phi), Trajectory(sol.prob.times, p)


def from_physical_variables(phi, p, eqs):
    """Inverse change of variables: psi = phi e^{-p + a'|v|^2}, eta = e^{p - a'|v|^2}."""
    shifted = p - eqs.alpha_prime * eqs.vgrid.speed2
    return phi * np.exp(-shifted), np.exp(shifted)


@dataclass
class DecayReport:
    times: np.ndarray
    sup_psi: np.ndarray
    sup_eta: np.ndarray
    beta_psi: np.ndarray
    beta_eta: np.ndarray
    scaled_psi: np.ndarray  # (1+s)^sigma |psi_p(s)|_beta
    scaled_eta: np.ndarray  # (1+(t-s))^sigma |eta_p(s)|_beta
    psi_norm: float  # regime trajectory norm of psi_p
    eta_norm: float  # regime trajectory norm of eta_p
    a_star: float


def decay_report(sol):
    prob = sol.prob
    cfg = prob.cfg
    vg = prob.vgrid
    times = prob.times
    t = prob.t
    psi, eta = sol.pair.psi, sol.pair.eta
    bp = weighted_sup_norm(psi, cfg.beta, vg)
    be = weighted_sup_norm(eta, cfg.beta, vg)
    a, b = regime_distance(psi, eta, prob)
    return DecayReport(
        times=times,
        sup_psi=np.abs(psi).max(axis=(1, 2)),
        sup_eta=np.abs(eta).max(axis=(1, 2)),
        beta_psi=bp,
        beta_eta=be,
        scaled_psi=(1.0 + times) ** cfg.sigma * bp,
        scaled_eta=(1.0 + (t - times)) ** cfg.sigma * be,
        psi_norm=a,
        eta_norm=b,
        a_star=max(a, b),
    )
