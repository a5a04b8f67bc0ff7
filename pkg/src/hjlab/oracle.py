"""Loop-naive reimplementations used as equivalence oracles on tiny grids.

Nothing here calls the collision table, the numba kernels, the transport
gathers or the functional code.  Only grid construction (velocity lattice,
space nodes, sphere nodes and weights) is shared, because the equivalence
under test is implementation correctness, not discretization accuracy.
"""

from dataclasses import dataclass, field
import itertools
import math

import numpy as np
from scipy import integrate

# largest instance the oracles accept
MAX_VELOCITY_NODES = 200
MAX_SPACE_NODES = 64
_EPS = 1e-300
# retention thresholds of the collision rule (shared rule, separate code)
_GAIN_TOL = 1e-12
_BALL_REL = 1e-12
_SNAP = 1e-10
_ON_LATTICE = 1e-9


class OracleSizeError(ValueError):
    """Instance exceeds the oracle cap."""


@dataclass
class OracleReport:
    name: str
    main: float
    oracle: float
    abs: float = field(init=False)
    rel: float = field(init=False)
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = float(self.main), float(self.oracle)
        self.abs = abs(a - b)
        self.rel = self.abs / max(abs(a), abs(b), _EPS)


def _check_size(vgrid, sgrid=None):
    if vgrid.size > MAX_VELOCITY_NODES:
        raise OracleSizeError(f"{vgrid.size} velocity nodes exceed the oracle cap {MAX_VELOCITY_NODES}")
    if sgrid is not None and sgrid.size > MAX_SPACE_NODES:
        raise OracleSizeError(f"{sgrid.size} space nodes exceed the oracle cap {MAX_SPACE_NODES}")


def _arr(f):
    return np.array(f.values if hasattr(f, "values") else f, dtype=float)


def _node_lookup(vgrid):
    return {tuple(int(c) for c in k): n for n, k in enumerate(vgrid.lattice)}


def _lattice_weight_factor(squad, q):
    """|u|^2 for omega = u/|u| with u integer; found by scaling to the largest entry."""
    om = squad.nodes[q]
    u = om / max(abs(c) for c in om)
    return float(sum(round(c) ** 2 for c in u))


def _corners(vgrid, lookup, point):
    """Own multilinear stencil: list of (node, weight), or None if a corner is outside."""
    h = vgrid.h
    per_axis = []
    for c in point:
        u = c / h
        r = round(u)
        if abs(u - r) < _SNAP:
            per_axis.append([(r, 1.0)])
        else:
            b = math.floor(u)
            fr = u - b
            per_axis.append([(b, 1.0 - fr), (b + 1, fr)])
    out = []
    for combo in itertools.product(*per_axis):
        k = tuple(c[0] for c in combo)
        if k not in lookup:
            return None
        w = 1.0
        for c in combo:
            w *= c[1]
        out.append((lookup[k], w))
    return out


def _lattice_node(vgrid, lookup, point):
    h = vgrid.h
    k = []
    for c in point:
        u = c / h
        r = round(u)
        if abs(u - r) > _ON_LATTICE:
            return None
        k.append(r)
    n = lookup.get(tuple(k))
    return None if n is None else [(n, 1.0)]


def collision_triples(vgrid, squad, rule="lattice"):
    """Every retained (v, v*, omega) with weight and stencils, by naive loops."""
    _check_size(vgrid)
    lookup = _node_lookup(vgrid)
    vel = vgrid.nodes
    h = vgrid.h
    R2 = vgrid.R ** 2 * (1.0 + _BALL_REL)
    out = []
    for i in range(vgrid.size):
        for q in range(squad.size):
            om = squad.nodes[q]
            fac = _lattice_weight_factor(squad, q) if rule == "lattice" else 1.0
            for j in range(vgrid.size):
                g = sum((vel[j][a] - vel[i][a]) * om[a] for a in range(vgrid.d))
                if g <= _GAIN_TOL * h:
                    continue
                vp = [vel[i][a] + g * om[a] for a in range(vgrid.d)]
                vs = [vel[j][a] - g * om[a] for a in range(vgrid.d)]
                if rule == "lattice":
                    sp = _lattice_node(vgrid, lookup, vp)
                    ss = _lattice_node(vgrid, lookup, vs)
                else:
                    if sum(c * c for c in vp) > R2 or sum(c * c for c in vs) > R2:
                        continue
                    sp = _corners(vgrid, lookup, vp)
                    ss = _corners(vgrid, lookup, vs)
                if sp is None or ss is None:
                    continue
                w = g * squad.weights[q] * fac * vgrid.cell_volume
                out.append((i, j, w, sp, ss))
    return out


def _interp(a, stencil):
    s = 0.0
    for n, w in stencil:
        s += a[n] * w
    return s


def oracle_collision(eta, psi1, psi2, vgrid, squad, rule="lattice", triples=None):
    """Q_eta(psi1, psi2) by an explicit loop over (x, v, v*, omega)."""
    e, a, b = (_arr(f) for f in (eta, psi1, psi2))
    e, a, b = np.broadcast_arrays(e, a, b)
    if triples is None:
        triples = collision_triples(vgrid, squad, rule)
    lead = e.shape[:-1]
    out = np.zeros(e.shape)
    for idx in np.ndindex(*lead):
        er, ar, br = e[idx], a[idx], b[idx]
        o = out[idx]
        for i, j, w, sp, ss in triples:
            gain = _interp(ar, sp) * _interp(br, ss) + _interp(br, sp) * _interp(ar, ss)
            loss = ar[i] * br[j] + br[i] * ar[j]
            o[i] += 0.5 * w * er[j] * (gain - loss)
    return out


def oracle_hamiltonian(phi, p, vgrid, sgrid, squad, rule="lattice", triples=None):
    """1/2 sum_x sum w phi phi* (e^{Delta p} - 1) times the cell volume."""
    f, q = np.broadcast_arrays(_arr(phi), _arr(p))
    if triples is None:
        triples = collision_triples(vgrid, squad, rule)
    total = 0.0
    for x in range(f.shape[0]):
        for i, j, w, sp, ss in triples:
            dp = _interp(q[x], sp) + _interp(q[x], ss) - q[x][i] - q[x][j]
            total += w * f[x][i] * f[x][j] * (math.exp(dp) - 1.0)
    return 0.5 * total * sgrid.cell_volume * vgrid.cell_volume


def oracle_hamiltonian_sym(psi, eta, vgrid, sgrid, squad, rule="lattice", triples=None):
    """-1/4 sum_x sum w (psi' psi*' - psi psi*)(eta' eta*' - eta eta*) times the cell volume."""
    a, b = np.broadcast_arrays(_arr(psi), _arr(eta))
    if triples is None:
        triples = collision_triples(vgrid, squad, rule)
    total = 0.0
    for x in range(a.shape[0]):
        for i, j, w, sp, ss in triples:
            A = _interp(a[x], sp) * _interp(a[x], ss) - a[x][i] * a[x][j]
            B = _interp(b[x], sp) * _interp(b[x], ss) - b[x][i] * b[x][j]
            total += w * A * B
    return -0.25 * total * sgrid.cell_volume * vgrid.cell_volume


def _equilibrium(prob):
    """G(v) = (2 pi)^{-d/2} exp((alpha - alpha') |v|^2) recomputed from scratch."""
    vg = prob.vgrid
    alpha = prob.cfg.alpha
    ap = 0.5 * (0.5 + alpha)
    v2 = np.array([sum(c * c for c in v) for v in vg.nodes])
    return (2.0 * math.pi) ** (-0.5 * vg.d) * np.exp((alpha - ap) * v2)


def _transport(f, tau, vgrid, sgrid):
    """f(x - tau v, v) with periodic multilinear interpolation, one node at a time."""
    m, d = sgrid.m, sgrid.d
    if m == 1 or tau == 0:
        return f.copy()
    out = np.zeros_like(f)
    shape = (m,) * d
    for x in range(sgrid.size):
        kx = np.unravel_index(x, shape)
        for v in range(vgrid.size):
            pos = [kx[a] - tau * vgrid.nodes[v][a] * m for a in range(d)]
            s = 0.0
            for bits in itertools.product((0, 1), repeat=d):
                w = 1.0
                k = []
                for a in range(d):
                    b = math.floor(pos[a])
                    fr = pos[a] - b
                    w *= fr if bits[a] else 1.0 - fr
                    k.append(int(b + bits[a]) % m)
                s += w * f[np.ravel_multi_index(tuple(k), shape), v]
            out[x, v] = s
    return out


class _NaiveDynamics:
    """Linear semigroup steps rebuilt from oracle collisions."""

    def __init__(self, prob, triples):
        self.prob = prob
        self.triples = triples
        vg = prob.vgrid
        self.G = _equilibrium(prob)
        self.nu = np.zeros(vg.size)
        for i, j, w, _, _ in triples:
            self.nu[i] += w * self.G[j] ** 2
        self.scheme = prob.forward.scheme
        self.delta_sub = prob.forward.delta_sub
        if self.scheme == "cayley":
            V = vg.size
            L = np.zeros((V, V))
            for k in range(V):
                e = np.zeros(V)
                e[k] = 1.0
                L[:, k] = 2.0 * oracle_collision(self.G, e, self.G, vg, None, triples=triples)
            self.L = L
            self._cache = {}

    def _q_lin(self, f):
        return 2.0 * oracle_collision(self.G[None, :], f, self.G[None, :], self.prob.vgrid, None,
                                      triples=self.triples)

    def step(self, f, delta, direction):
        if self.scheme == "cayley":
            key = float(delta)
            if key not in self._cache:
                eye = np.eye(len(self.nu))
                self._cache[key] = (eye - 0.5 * delta * self.L, eye + 0.5 * delta * self.L)
            lhs, rhs = self._cache[key]
            vg, sg = self.prob.vgrid, self.prob.sgrid
            tau = 0.5 * delta * direction
            a = _transport(f, tau, vg, sg)
            a = np.stack([np.linalg.solve(lhs, rhs @ row) for row in a])
            return _transport(a, tau, vg, sg)
        ratio = delta / self.delta_sub
        n = round(ratio)
        if n >= 1 and abs(ratio - n) < 1e-9 * max(1.0, ratio):
            h = self.delta_sub
        else:
            n = math.ceil(ratio)
            h = delta / n
        a = f
        for _ in range(n):
            kf = self._q_lin(a) + self.nu * a
            moved = _transport(a + h * kf, direction * h, self.prob.vgrid, self.prob.sgrid)
            a = np.exp(-self.nu * h) * moved
        return a


def _check_problem(prob):
    _check_size(prob.vgrid, prob.sgrid)


def oracle_apply_gamma(pair, prob, triples=None):
    """One sweep of the fixed-point map with naive sources and semigroup steps."""
    _check_problem(prob)
    vg = prob.vgrid
    if triples is None:
        triples = collision_triples(vg, prob.squad, prob.table.rule)
    dyn = _NaiveDynamics(prob, triples)
    G = dyn.G[None, :]
    times = prob.times
    N = len(times) - 1

    def source(a, b, n):
        # 2 Q_b(a, G) + Q_G(a, a) + Q_b(a, a), minus (G + a) phi under forcing
        q = lambda e, x, y: oracle_collision(e, x, y, vg, None, triples=triples)
        s = 2.0 * q(b, a, G) + q(G, a, a) + q(b, a, a)
        if prob.phi is not None:
            s = s - (G + a) * prob.phi[n]
        return s

    fplus = [source(pair.psi[n], pair.eta[n], n) for n in range(N + 1)]
    fminus = [source(pair.eta[n], pair.psi[n], n) for n in range(N + 1)]
    psi = np.zeros_like(pair.psi)
    eta = np.zeros_like(pair.eta)
    psi[0] = prob.psi0
    eta[N] = prob.eta_t
    for n in range(N):
        dt = times[n + 1] - times[n]
        psi[n + 1] = dyn.step(psi[n] + 0.5 * dt * fplus[n], dt, +1) + 0.5 * dt * fplus[n + 1]
        k = N - n
        eta[k - 1] = dyn.step(eta[k] + 0.5 * dt * fminus[k], dt, -1) + 0.5 * dt * fminus[k - 1]
    return psi, eta


def _pair(a, b, prob):
    return float(np.sum(a * b)) * prob.sgrid.cell_volume * prob.vgrid.cell_volume


def _trapezoid(vals, times):
    s = 0.0
    for n in range(len(times) - 1):
        s += 0.5 * (vals[n] + vals[n + 1]) * (times[n + 1] - times[n])
    return s


def oracle_functional(sol, cfg=None, triples=None):
    """(I_def, I_decomp) recomputed with naive loops from a converged solution."""
    prob = sol.prob
    _check_problem(prob)
    if not sol.converged:
        raise ValueError("oracle_functional needs a converged solution")
    vg, sg = prob.vgrid, prob.sgrid
    if triples is None:
        triples = collision_triples(vg, prob.squad, prob.table.rule)
    G = _equilibrium(prob)[None, :]
    psi = G + sol.pair.psi
    eta = G + sol.pair.eta
    times = prob.times
    q = lambda e, x, y: oracle_collision(e, x, y, vg, None, triples=triples)
    a, b, h, c = [], [], [], []
    for n in range(len(times)):
        d_eta = -q(psi[n], eta[n], eta[n])
        if prob.phi is not None:
            d_eta = d_eta + eta[n] * prob.phi[n]
        a.append(_pair(d_eta, psi[n], prob))
        b.append(0.0 if prob.phi is None else _pair(prob.phi[n], psi[n] * eta[n], prob))
        h.append(oracle_hamiltonian_sym(psi[n], eta[n], vg, sg, None, triples=triples))
        c.append(_pair(eta[n], q(eta[n], psi[n], psi[n]), prob))
    i_def = -1.0 + _pair(psi[0], eta[0], prob) + _trapezoid(a, times) - _trapezoid(b, times) + _trapezoid(h, times)
    i_dec = -1.0 + _pair(eta[-1], psi[-1], prob) - 0.5 * _trapezoid(c, times)
    return i_def, i_dec


def oracle_stationary(g_hat, prob):
    """-1 + sum e^{g_hat} M with M recomputed from scratch."""
    vg = prob.vgrid
    v2 = np.array([sum(c * c for c in v) for v in vg.nodes])
    M = (2.0 * math.pi) ** (-0.5 * vg.d) * np.exp(-0.5 * v2)
    return -1.0 + _pair(np.exp(_arr(g_hat)), M[None, :], prob)


def convolution_integral(sigma1, sigma2, t, n_points=2001):
    """int_0^t (1+(t-s))^-sigma2 (1+s)^-sigma1 ds by composite Simpson."""
    if t == 0:
        return 0.0
    if n_points < 3:
        raise ValueError("Simpson needs at least 3 points")
    if n_points % 2 == 0:
        n_points += 1
    s = np.linspace(0.0, t, n_points)
    f = (1.0 + (t - s)) ** (-sigma2) * (1.0 + s) ** (-sigma1)
    return float(integrate.simpson(f, x=s))


def convolution_bound_check(sigma1, sigma2, t, n_points=2001):
    """Witnessed constant C = integral * (1+t)^min(sigma1, sigma2).

    ``main`` is the Simpson value, ``oracle`` an adaptive-quadrature value of
    the same integral; ``detail['C']`` is the witnessed constant.
    """
    if not (sigma1 > 1 and sigma2 > 1):
        raise ValueError(f"the convolution bound needs sigma1, sigma2 > 1, got {sigma1}, {sigma2}")
    if t < 0:
        raise ValueError("t must be >= 0")
    simpson = convolution_integral(sigma1, sigma2, t, n_points)
    ref = 0.0 if t == 0 else integrate.quad(
        lambda s: (1.0 + (t - s)) ** (-sigma2) * (1.0 + s) ** (-sigma1), 0.0, t, epsabs=1e-14, epsrel=1e-13
    )[0]
    rate = min(sigma1, sigma2)
    c = simpson * (1.0 + t) ** rate
    return OracleReport("convolution_bound", simpson, ref, detail={"t": t, "C": c, "rate": rate})


def convolution_constant_sweep(sigma1, sigma2, ts, n_points=2001):
    """Witnessed C at every t of the sweep and the max/min ratio over t > 0."""
    reports = [convolution_bound_check(sigma1, sigma2, t, n_points) for t in ts]
    cs = [r.detail["C"] for r in reports if r.detail["t"] > 0]
    ratio = max(cs) / min(cs) if cs and min(cs) > 0 else math.inf
    return reports, ratio
