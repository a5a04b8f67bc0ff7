"""Reference Maxwellians, the conserved-quantity kernel, and weighted norms.

All equilibria are stored through their logarithms so that products such as
M/B or e^g B are formed as a single exponential of a sum.  This keeps
identities like E B = G exact at the level of the exponent.
"""

from dataclasses import dataclass

import numpy as np

from .grids import Field


def _as_array(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def _like(template, arr):
    if isinstance(template, Field):
        return Field(template.sgrid, template.vgrid, arr)
    return arr


@dataclass(eq=False)
class EquilibriumSet:
    sgrid: object
    vgrid: object
    alpha: float
    alpha_prime: float
    log_M: np.ndarray  # per velocity node
    log_E: np.ndarray
    log_B: np.ndarray
    log_G: np.ndarray

    def _field(self, logv):
        return Field.from_velocity(self.sgrid, self.vgrid, np.exp(logv))

    @property
    def M(self):
        return self._field(self.log_M)

    @property
    def E(self):
        return self._field(self.log_E)

    @property
    def B(self):
        return self._field(self.log_B)

    @property
    def G(self):
        return self._field(self.log_G)

    @property
    def g_values(self):
        """G as an (X, V) array."""
        return np.broadcast_to(np.exp(self.log_G), (self.sgrid.size, self.vgrid.size))

    def inner(self, a, b):
        """Discrete L^2 inner product over phase space (cell-volume weights)."""
        a = _as_array(a)
        b = _as_array(b)
        w = self.sgrid.cell_volume * self.vgrid.cell_volume
        return np.sum(a * b, axis=(-2, -1)) * w


def make_equilibria(vgrid, sgrid, alpha):
    alpha = float(alpha)
    if alpha >= 0.5:
        raise ValueError(f"equilibrium.alpha must be < 1/2, got {alpha}")
    d = vgrid.d
    v2 = vgrid.speed2
    ap = 0.5 * (0.5 + alpha)
    norm = -0.5 * d * np.log(2.0 * np.pi)
    log_M = norm - 0.5 * v2
    log_E = norm + alpha * v2
    log_B = -ap * v2
    # E B = G holds in the exponent; terminal data e^g B with g = log E + rho
    # is then exp(log G + rho), exactly G when rho = 0
    log_G = log_E + log_B
    return EquilibriumSet(sgrid, vgrid, alpha, ap, log_M, log_E, log_B, log_G)


@dataclass(eq=False)
class KernelBasis:
    eqs: EquilibriumSet
    vectors: np.ndarray  # shape (d+2, X, V), orthonormal

    def coefficients(self, f):
        return self.eqs.inner(self.vectors, _as_array(f)[..., None, :, :])


def kernel_generators(eqs):
    """The d+2 raw spanning fields G, G v_i, G |v|^2 as an array (d+2, X, V)."""
    vg = eqs.vgrid
    g = np.exp(eqs.log_G)
    rows = [g] + [g * vg.nodes[:, i] for i in range(vg.d)] + [g * vg.speed2]
    gens = np.stack(rows)
    return np.broadcast_to(gens[:, None, :], (len(rows), eqs.sgrid.size, vg.size)).copy()


def kernel_basis(eqs):
    """Gram-Schmidt with one reorthogonalization pass."""
    gens = kernel_generators(eqs)
    basis = []
    for g in gens:
        q = g.copy()
        for _ in range(2):
            for b in basis:
                q = q - eqs.inner(q, b) * b
        nrm = np.sqrt(eqs.inner(q, q))
        if nrm <= 1e-14 * np.sqrt(eqs.inner(g, g)):
            raise ValueError("kernel generators are linearly dependent on this grid")
        basis.append(q / nrm)
    return KernelBasis(eqs, np.stack(basis))


def project_off_kernel(f, basis):
    """f minus its orthogonal projection onto the kernel; works on batches."""
    if isinstance(f, Field) and f.vgrid is not basis.eqs.vgrid:
        raise ValueError("field and kernel basis live on different grids")
    a = _as_array(f)
    if a.shape[-2:] != basis.vectors.shape[-2:]:
        raise ValueError("field and kernel basis live on different grids")
    out = a.copy()
    for b in basis.vectors:
        out = out - basis.eqs.inner(out, b)[..., None, None] * b
    return _like(f, out)


def velocity_weight(vgrid, beta):
    return (1.0 + vgrid.speed) ** beta


def weighted_sup_norm(f, beta, vgrid=None):
    """max |f(x,v)| (1+|v|)^beta; batched over leading axes for arrays."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if isinstance(f, Field):
        vgrid = f.vgrid
    a = _as_array(f)
    return np.max(np.abs(a) * velocity_weight(vgrid, beta), axis=(-2, -1))


@dataclass(eq=False)
class Trajectory:
    """Fields on a uniform time grid over [0, t]; values shape (N+1, X, V)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[0] != len(self.times):
            raise ValueError("trajectory times and values disagree in length")

    def __len__(self):
        return len(self.times)

    @property
    def t(self):
        return float(self.times[-1]) if len(self.times) else 0.0

    def reversed(self):
        """Time reversal s -> t - s on a uniform grid."""
        return Trajectory(self.times.copy(), self.values[::-1].copy())


@dataclass
class NormReport:
    beta: float
    sigma: float
    mode: str
    reversed: bool
    times: np.ndarray
    entries: np.ndarray  # per-time L^infty_beta norms
    scaled: np.ndarray  # per-time weighted entries
    value: float


def time_weight(times, t, sigma, mode):
    if mode == "polynomial":
        return (1.0 + times) ** sigma
    if mode == "exponential":
        return np.exp(sigma * times)
    raise ValueError(f"unknown norm mode {mode!r}")


def trajectory_norm(traj, beta, sigma, mode, reversed, vgrid):
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    tr = traj.reversed() if reversed else traj
    entries = weighted_sup_norm(tr.values, beta, vgrid)
    scaled = time_weight(tr.times, tr.t, sigma, mode) * entries
    return NormReport(beta, sigma, mode, reversed, tr.times, entries, scaled, float(scaled.max()))
