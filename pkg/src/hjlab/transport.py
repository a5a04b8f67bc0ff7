"""Free transport, damped transport D1, and the linearized semigroups e^{sB+-}.

B+ = -v.grad_x + 2 Q_G(., G) drives the forward perturbation and
B- = +v.grad_x + 2 Q_G(., G) the backward one.  Both split as
-nu + K plus transport; D1(s) = e^{-nu s} S_{+-s} is applied exactly and the
compact part K by time stepping.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np
import scipy.linalg as sla

from .collision import collision_frequency, linearized_K, linearized_matrix
from .grids import Field

SCHEMES = ("expeuler", "cayley")


@dataclass(eq=False)
class Kinetics:
    """Grids, equilibria, collision table and nu bundled for the linear dynamics."""

    sgrid: object
    vgrid: object
    eqs: object
    table: object

    @cached_property
    def nu(self):
        return collision_frequency(self.eqs, self.table).values[0]

    @cached_property
    def lmat(self):
        """Matrix of 2 Q_G(., G) on velocity space."""
        return linearized_matrix(self.eqs, self.table)

    def apply_k(self, f):
        """K f on an array with trailing (X, V) axes."""
        if self.sgrid.homogeneous:
            return f @ self.lmat.T + self.nu * f
        return linearized_K(f, self.eqs, self.table, nu=Field.from_velocity(self.sgrid, self.vgrid, self.nu))


def _vals(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def _like(template, arr):
    if isinstance(template, Field):
        return Field(template.sgrid, template.vgrid, arr)
    return arr


def _space_multi_index(sgrid):
    m, d = sgrid.m, sgrid.d
    return np.stack(np.unravel_index(np.arange(sgrid.size), (m,) * d), axis=1)


def free_transport(f, tau, sgrid, vgrid):
    """Semi-Lagrangian S_tau f(x, v) = f(x - tau v, v), periodic multilinear in x."""
    a = _vals(f)
    if tau == 0 or sgrid.m == 1:
        return _like(f, a.copy())
    m, d = sgrid.m, sgrid.d
    shift = tau * vgrid.nodes * m  # cells moved, per velocity and axis
    k = np.floor(shift)
    t = shift - k
    k = k.astype(np.int64)
    xi = _space_multi_index(sgrid)  # (X, d)
    out = np.zeros_like(a)
    vcol = np.arange(vgrid.size)[None, :]
    for c in range(2 ** d):
        w = np.ones(vgrid.size)
        src = np.zeros((sgrid.size, vgrid.size), dtype=np.int64)
        for ax in range(d):
            b = (c >> ax) & 1
            w = w * (t[:, ax] if b else 1.0 - t[:, ax])
            src = src * m + (xi[:, ax, None] - k[None, :, ax] - b) % m
        out += w * a[..., src, vcol]
    return _like(f, out)


def d1_apply(f, s, direction, kin):
    """D1(s) f = e^{-nu s} f(x -+ s v, v) for direction +1 (forward) or -1 (backward)."""
    if s < 0:
        raise ValueError("d1_apply needs s >= 0")
    moved = _vals(free_transport(f, direction * s, kin.sgrid, kin.vgrid))
    return _like(f, np.exp(-kin.nu * s) * moved)


@dataclass(eq=False)
class SemigroupStepper:
    direction: int
    delta_sub: float
    kin: Kinetics
    scheme: str = "expeuler"
    k_scale: float = 1.0  # test hook: 0 switches off the compact part
    _cayley: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.direction not in (1, -1):
            raise ValueError("stepper direction must be +1 or -1")
        if not self.delta_sub > 0:
            raise ValueError("delta_sub must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown semigroup scheme {self.scheme!r}")

    def cayley(self, delta):
        """(I - delta/2 L)^-1 (I + delta/2 L) with L = K - nu on velocity space."""
        key = float(delta)
        if key not in self._cayley:
            kin = self.kin
            L = self.k_scale * (kin.lmat + np.diag(kin.nu)) - np.diag(kin.nu)
            eye = np.eye(kin.vgrid.size)
            self._cayley[key] = sla.solve(eye - 0.5 * delta * L, eye + 0.5 * delta * L).T.copy()
        return self._cayley[key]


def make_stepper(direction, delta_sub, kin, scheme="expeuler", k_scale=1.0):
    return SemigroupStepper(direction, float(delta_sub), kin, scheme, float(k_scale))


def _substeps(delta, delta_sub):
    ratio = delta / delta_sub
    n = round(ratio)
    if n >= 1 and abs(ratio - n) < 1e-9 * max(1.0, ratio):
        return n, delta_sub
    n = math.ceil(ratio)
    return n, delta / n


def semigroup_step(f, delta, stepper):
    """Advance by e^{delta B}.

    expeuler: substeps h <= delta_sub with f <- D1(h)(f + h K f).
    cayley: one Cayley transform of size delta for the collision part,
    between two half transports (Strang splitting) when space is resolved.
    """
    if not delta > 0:
        raise ValueError("semigroup_step needs delta > 0")
    a = _vals(f)
    kin = stepper.kin
    if stepper.scheme == "cayley":
        if kin.sgrid.homogeneous:
            return _like(f, a @ stepper.cayley(delta))
        tau = 0.5 * delta * stepper.direction
        a = _vals(free_transport(a, tau, kin.sgrid, kin.vgrid)) @ stepper.cayley(delta)
        return _like(f, _vals(free_transport(a, tau, kin.sgrid, kin.vgrid)))
    n, h = _substeps(delta, stepper.delta_sub)
    for _ in range(n):
        kf = kin.apply_k(a) if stepper.k_scale else 0.0
        a = _vals(d1_apply(a + (h * stepper.k_scale) * kf, h, stepper.direction, kin))
    return _like(f, a)


def semigroup_apply(f, s, stepper):
    """e^{sB} f as a composition of steps of size delta_sub."""
    if s < 0:
        raise ValueError("semigroup_apply needs s >= 0")
    if s == 0:
        return _like(f, _vals(f).copy())
    n, h = _substeps(s, stepper.delta_sub)
    a = _vals(f)
    for _ in range(n):
        a = _vals(semigroup_step(a, h, stepper))
    return _like(f, a)


def d2_residual(f, s, stepper):
    """D2(s) f = e^{sB} f - D1(s) f."""
    full = _vals(semigroup_apply(f, s, stepper))
    return _like(f, full - _vals(d1_apply(f, s, stepper.direction, stepper.kin)))
