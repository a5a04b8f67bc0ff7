"""Hamiltonians H and H', the functional I(t, g) and its stationary limit.

Functional values are O(1) while their variations in t are tiny for small
perturbations, so every functional is returned as ``base + pert`` with
base = -1 + <G, G> shared by all formulas; differences (HJ residual,
long-time gap, formula discrepancy) are taken between the ``pert`` parts.
"""

from dataclasses import dataclass
import math

import numba
import numpy as np

from .collision import biased_collision
from .grids import Field, collide, interpolate
from .solver import build_problem, solve_coupled

# largest Delta p before e^{Delta p} overflows a double
_EXP_LIMIT = 709.0


def _vals(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def delta_p(p, v, v_star, omega, x=None):
    """p(x,v') + p(x,v*') - p(x,v) - p(x,v*) with multilinear interpolation."""
    if x is None:
        x = np.zeros(p.sgrid.d)
    vp, vs = collide(v, v_star, omega)
    return (interpolate(p, x, vp) + interpolate(p, x, vs)
            - interpolate(p, x, v) - interpolate(p, x, v_star))


@numba.njit(cache=True)
def _stencil(a, idx, w, k):
    if idx.shape[1] == 1:
        return a[idx[k, 0]]
    s = 0.0
    for c in range(idx.shape[1]):
        s += a[idx[k, c]] * w[k, c]
    return s


@numba.njit(cache=True, parallel=True)
def _hsym_rows(psi, eta, i, j, p_idx, p_w, s_idx, s_w, w, out):
    """Per row: sum w A B, sum w psi psi* B, sum w A eta eta*."""
    for r in numba.prange(psi.shape[0]):
        a, b = psi[r], eta[r]
        s0 = 0.0
        s1 = 0.0
        s2 = 0.0
        for k in range(i.shape[0]):
            ii, jj = i[k], j[k]
            aa = a[ii] * a[jj]
            bb = b[ii] * b[jj]
            A = _stencil(a, p_idx, p_w, k) * _stencil(a, s_idx, s_w, k) - aa
            B = _stencil(b, p_idx, p_w, k) * _stencil(b, s_idx, s_w, k) - bb
            s0 += w[k] * A * B
            s1 += w[k] * aa * B
            s2 += w[k] * A * bb
        out[r, 0] += s0
        out[r, 1] += s1
        out[r, 2] += s2


@numba.njit(cache=True, parallel=True)
def _ham_rows(phi, p, i, j, p_idx, p_w, s_idx, s_w, w, out):
    """Per row: sum w phi phi* expm1(Delta p), and max Delta p."""
    for r in numba.prange(phi.shape[0]):
        f, q = phi[r], p[r]
        s = 0.0
        dmax = -np.inf
        for k in range(i.shape[0]):
            ii, jj = i[k], j[k]
            dp = _stencil(q, p_idx, p_w, k) + _stencil(q, s_idx, s_w, k) - q[ii] - q[jj]
            if dp > dmax:
                dmax = dp
            s += w[k] * f[ii] * f[jj] * np.expm1(dp)
        out[r, 0] += s
        out[r, 1] = max(out[r, 1], dmax)


def _row_view(a, V):
    return np.ascontiguousarray(np.asarray(a, dtype=float).reshape(-1, V))


def hamiltonian_sym_forms(psi, eta, table, sgrid):
    """Symmetric H' and its two one-sided forms; batched over leading axes.

    Returns an array (..., 3): -1/4 sum w A B, 1/2 sum w psi psi* B,
    1/2 sum w A eta eta*, each times the phase-space cell volume.
    """
    a, b = np.broadcast_arrays(np.atleast_2d(_vals(psi)), np.atleast_2d(_vals(eta)))
    lead = a.shape[:-2]
    V = a.shape[-1]
    ar, br = _row_view(a, V), _row_view(b, V)
    out = np.zeros((len(ar), 3))
    for blk in table.blocks():
        if blk.size:
            _hsym_rows(ar, br, blk.i, blk.j, blk.p_idx, blk.p_w, blk.s_idx, blk.s_w, blk.weight, out)
    vol = sgrid.cell_volume * table.vgrid.cell_volume
    out = out.reshape(lead + (a.shape[-2], 3)).sum(axis=-2) * vol
    out[..., 0] *= -0.25
    out[..., 1:] *= 0.5
    return out


def hamiltonian_sym(psi, eta, table, sgrid=None):
    """H'(psi, eta) = -1/4 sum w (psi'psi*' - psi psi*)(eta'eta*' - eta eta*)."""
    if sgrid is None:
        sgrid = psi.sgrid
    return hamiltonian_sym_forms(psi, eta, table, sgrid)[..., 0]


def hamiltonian(phi, p, table, sgrid=None):
    """H(phi, p) = 1/2 sum w phi phi* (e^{Delta p} - 1), summed over space."""
    if sgrid is None:
        sgrid = phi.sgrid
    a, b = np.broadcast_arrays(np.atleast_2d(_vals(phi)), np.atleast_2d(_vals(p)))
    lead = a.shape[:-2]
    V = a.shape[-1]
    ar, br = _row_view(a, V), _row_view(b, V)
    out = np.zeros((len(ar), 2))
    out[:, 1] = -np.inf
    for blk in table.blocks():
        if blk.size:
            _ham_rows(ar, br, blk.i, blk.j, blk.p_idx, blk.p_w, blk.s_idx, blk.s_w, blk.weight, out)
    if np.any(out[:, 1] > _EXP_LIMIT):
        raise OverflowError(
            f"e^(Delta p) overflows (max Delta p = {out[:, 1].max():.3g}); use a smaller perturbation"
        )
    vol = sgrid.cell_volume * table.vgrid.cell_volume
    return 0.5 * out[:, 0].reshape(lead + (a.shape[-2],)).sum(axis=-1) * vol


def _trap(values, times):
    if len(times) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def _require_converged(sol):
    if not sol.converged:
        raise ValueError(f"solution did not converge ({sol.reason}); functional undefined")


def functional_base(eqs):
    """-1 + <G, G>, the part shared by every functional formula."""
    g = np.exp(eqs.log_G)
    return -1.0 + eqs.inner(g[None, :], g[None, :]) * eqs.sgrid.size


def _pairing_pert(prob, a_p, b_p):
    """<G + a_p, G + b_p> - <G, G> without cancellation."""
    eqs = prob.eqs
    g = prob.g_vals
    return eqs.inner(g, a_p) + eqs.inner(g, b_p) + eqs.inner(a_p, b_p)


def evaluate_functional(sol, split=False):
    """-1 + <f0 B^-1, eta(0)> + <<D_s eta, psi>> - <<phi, psi eta>> + int H' ds."""
    _require_converged(sol)
    prob = sol.prob
    eqs, table, times = prob.eqs, prob.table, prob.times
    psi, eta = sol.psi, sol.eta
    head = _pairing_pert(prob, sol.pair.psi[0], sol.pair.eta[0])
    q = biased_collision(psi, eta, eta, table)  # Q_psi(eta, eta)
    d_eta = -q if prob.phi is None else eta * prob.phi - q
    a = eqs.inner(d_eta, psi)
    b = np.zeros(len(times)) if prob.phi is None else eqs.inner(prob.phi, psi * eta)
    h = hamiltonian_sym(psi, eta, table, prob.sgrid)
    pert = head + _trap(a, times) - _trap(b, times) + _trap(h, times)
    base = functional_base(eqs)
    return (base, pert) if split else base + pert


def functional_decomposed(sol, split=False):
    """-1 + <eta(t), psi(t)> - 1/2 <<eta, Q_eta(psi, psi)>>."""
    _require_converged(sol)
    prob = sol.prob
    eqs, table, times = prob.eqs, prob.table, prob.times
    psi, eta = sol.psi, sol.eta
    head = _pairing_pert(prob, sol.pair.eta[-1], sol.pair.psi[-1])
    q = biased_collision(eta, psi, psi, table)  # Q_eta(psi, psi)
    coll = eqs.inner(eta, q)
    pert = head - 0.5 * _trap(coll, times)
    base = functional_base(eqs)
    return (base, pert) if split else base + pert


def stationary_functional(g_hat, eqs, split=False):
    """-1 + sum e^{g_hat} M over phase space."""
    gh = _vals(g_hat)
    base = functional_base(eqs)
    # e^{g} M - G^2 = G^2 expm1(g + log M - 2 log G), accurate for g near log E
    expo = gh + eqs.log_M - 2.0 * eqs.log_G
    pert = eqs.inner(np.exp(2.0 * eqs.log_G), np.expm1(expo) * np.ones_like(gh))
    return (base, pert) if split else base + pert


@dataclass
class FunctionalReport:
    t: float
    i_def: float
    i_decomp: float
    discrepancy: float  # |I_def - I_decomp|
    relative_discrepancy: float
    i_inf: float
    gap: float  # |I(t) - I_inf|
    h_terminal: float  # H'(psi(t), eta(t))
    residual: float = float("nan")
    relative_residual: float = float("nan")


def functional_report(sol):
    prob = sol.prob
    base, p_def = evaluate_functional(sol, split=True)
    _, p_dec = functional_decomposed(sol, split=True)
    _, p_inf = stationary_functional(prob.g_hat, prob.eqs, split=True)
    i_def, i_dec = base + p_def, base + p_dec
    disc = abs(p_def - p_dec)
    h_t = float(hamiltonian_sym(sol.psi[-1], sol.eta[-1], prob.table, prob.sgrid))
    return FunctionalReport(
        t=prob.t,
        i_def=i_def,
        i_decomp=i_dec,
        discrepancy=disc,
        relative_discrepancy=disc / max(abs(i_def), abs(i_dec), 1e-300),
        i_inf=base + p_inf,
        gap=abs(p_dec - p_inf),
        h_terminal=h_t,
    )


@dataclass
class HJResidual:
    t: float
    delta_t: float
    slope: float  # [I(t + dt) - I(t)] / dt
    hamiltonian: float  # H'(psi_t(t), eta_t(t))
    residual: float
    relative: float


def hj_residual_details(cfg, t_list, delta_t, solutions=None):
    """Finite-difference check of dI/dt = H'(psi_t(t), eta_t(t)) at fixed g_hat."""
    out = []
    for t in t_list:
        sols = []
        for tt in (t, t + delta_t):
            key = round(tt, 12)
            if solutions is not None and key in solutions:
                s = solutions[key]
            else:
                s = solve_coupled(build_problem(cfg.with_(t=tt)))
                if solutions is not None:
                    solutions[key] = s
            _require_converged(s)
            sols.append(s)
        p0 = functional_decomposed(sols[0], split=True)[1]
        p1 = functional_decomposed(sols[1], split=True)[1]
        slope = (p1 - p0) / delta_t
        s0 = sols[0]
        h = float(hamiltonian_sym(s0.psi[-1], s0.eta[-1], s0.prob.table, s0.prob.sgrid))
        res = abs(slope - h)
        out.append(HJResidual(t, delta_t, slope, h, res, res / abs(h) if h else (0.0 if res == 0 else math.inf)))
    return out


def hj_residual(cfg, t_list, delta_t):
    return [r.residual for r in hj_residual_details(cfg, t_list, delta_t)]
