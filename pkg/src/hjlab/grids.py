"""Phase-space discretization: velocity ball, periodic torus, collision sphere.

Velocity space is a Cartesian lattice truncated to the ball |v| <= R, space is
the periodic unit torus, and the collision sphere is covered by a symmetric
quadrature rule.  Values on the product grid live in a ``Field``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import lebedev_rule

# Lattice points this close to the ball boundary still count as inside.
_BALL_TOL = 1e-9
# Fractional cell coordinates below this snap to the lower node.
_SNAP_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Cartesian lattice points of spacing ``h`` inside the ball of radius R."""

    d: int
    R: float
    n: int
    lattice: np.ndarray  # integer offsets from the origin, shape (V, d)

    @property
    def h(self):
        return 2.0 * self.R / (self.n - 1)

    @property
    def half(self):
        return (self.n - 1) // 2

    @property
    def size(self):
        return len(self.lattice)

    @property
    def cell_volume(self):
        return self.h ** self.d

    @cached_property
    def nodes(self):
        return self.lattice * self.h

    @cached_property
    def speed2(self):
        """|v|^2 at every node, computed from the exact integer lattice."""
        return (self.lattice ** 2).sum(axis=1) * self.h ** 2

    @cached_property
    def speed(self):
        return np.sqrt(self.speed2)

    @cached_property
    def cube(self):
        """Map from shifted lattice index to node number, -1 outside the ball."""
        c = -np.ones((self.n,) * self.d, dtype=np.int64)
        c[tuple((self.lattice + self.half).T)] = np.arange(self.size)
        return c

    def index_of(self, k):
        """Node number of integer lattice offsets ``k`` (shape (..., d)); -1 if absent."""
        k = np.asarray(k)
        shifted = k + self.half
        ok = np.all((shifted >= 0) & (shifted < self.n), axis=-1)
        out = np.full(k.shape[:-1], -1, dtype=np.int64)
        out[ok] = self.cube[tuple(shifted[ok].T)]
        return out

    @cached_property
    def origin(self):
        return int(self.index_of(np.zeros(self.d, dtype=np.int64)))


@dataclass(frozen=True, eq=False)
class SpaceGrid:
    """Uniform periodic lattice on the unit torus; m = 1 is the homogeneous mode."""

    d: int
    m: int

    @property
    def size(self):
        return self.m ** self.d

    @property
    def dx(self):
        return 1.0 / self.m

    @property
    def cell_volume(self):
        return self.dx ** self.d

    @property
    def homogeneous(self):
        return self.m == 1

    @cached_property
    def nodes(self):
        k = np.arange(self.m) / self.m
        grids = np.meshgrid(*([k] * self.d), indexing="ij")
        return np.stack(grids, axis=-1).reshape(-1, self.d)


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    d: int
    order: int
    nodes: np.ndarray  # shape (Q, d), unit vectors
    weights: np.ndarray  # shape (Q,)

    @property
    def size(self):
        return len(self.weights)

    @cached_property
    def antipode(self):
        """Index of -omega for every node."""
        diff = self.nodes[:, None, :] + self.nodes[None, :, :]
        return np.argmin(np.abs(diff).sum(axis=2), axis=1)

    @cached_property
    def lattice_directions(self):
        """Integer vectors u with omega = u/|u|, or None if some node is irrational."""
        scale = np.abs(self.nodes).max(axis=1, keepdims=True)
        u = self.nodes / scale
        ui = np.rint(u)
        if np.abs(u - ui).max() > 1e-12:
            return None
        return ui.astype(np.int64)


@dataclass(eq=False)
class Field:
    """Dense table of values over (space node, velocity node)."""

    sgrid: SpaceGrid
    vgrid: VelocityGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = (self.sgrid.size, self.vgrid.size)
        if self.values.shape != shape:
            raise ValueError(f"field table has shape {self.values.shape}, expected {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @classmethod
    def from_velocity(cls, sgrid, vgrid, fv):
        """Spatially constant field from a per-velocity-node array."""
        fv = np.asarray(fv, dtype=float)
        return cls(sgrid, vgrid, np.broadcast_to(fv, (sgrid.size, vgrid.size)).copy())

    @classmethod
    def from_function(cls, sgrid, vgrid, func):
        """Field from ``func(x, v)`` evaluated on broadcast node arrays."""
        x = sgrid.nodes[:, None, :]
        v = vgrid.nodes[None, :, :]
        vals = np.broadcast_to(func(x, v), (sgrid.size, vgrid.size))
        return cls(sgrid, vgrid, np.array(vals, dtype=float))

    def same_grids(self, other):
        return self.sgrid is other.sgrid and self.vgrid is other.vgrid


def build_velocity_grid(d, R, n):
    if d not in (2, 3):
        raise ValueError(f"velocity dimension must be 2 or 3, got {d}")
    if R <= 0:
        raise ValueError(f"velocity radius must be positive, got {R}")
    if n < 3 or n % 2 == 0:
        raise ValueError(f"nodes per axis must be an odd integer >= 3, got {n}")
    half = (n - 1) // 2
    k = np.arange(-half, half + 1)
    lat = np.stack(np.meshgrid(*([k] * d), indexing="ij"), axis=-1).reshape(-1, d)
    # |k h| <= R  <=>  |k|^2 <= half^2 since h = R / half
    keep = (lat ** 2).sum(axis=1) <= half ** 2
    return VelocityGrid(d=d, R=float(R), n=int(n), lattice=lat[keep].astype(np.int64))


def build_space_grid(d, m):
    if d not in (2, 3):
        raise ValueError(f"space dimension must be 2 or 3, got {d}")
    if m < 1:
        raise ValueError(f"space nodes per axis must be >= 1, got {m}")
    return SpaceGrid(d=d, m=int(m))


def build_sphere_quadrature(d, order):
    """Uniform circle rule (d=2) or Lebedev rule of the given degree (d=3)."""
    if order < 2:
        raise ValueError(f"sphere quadrature order must be >= 2, got {order}")
    if d == 2:
        if order % 2:
            raise ValueError(f"{order} circle nodes cannot be antipodally symmetric")
        theta = 2.0 * np.pi * np.arange(order) / order
        nodes = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        # clean roundoff so axis nodes are exact
        nodes[np.abs(nodes) < 1e-15] = 0.0
        weights = np.full(order, 2.0 * np.pi / order)
    elif d == 3:
        try:
            x, w = lebedev_rule(order)
        except (ValueError, NotImplementedError) as exc:
            raise ValueError(f"no Lebedev rule of order {order}") from exc
        nodes = np.ascontiguousarray(x.T)
        nodes[np.abs(nodes) < 1e-15] = 0.0
        weights = np.asarray(w, dtype=float)
    else:
        raise ValueError(f"sphere dimension must be 2 or 3, got {d}")
    quad = SphereQuadrature(d=d, order=int(order), nodes=nodes, weights=weights)
    anti = quad.antipode
    if not (np.allclose(nodes[anti], -nodes, atol=1e-13) and np.allclose(weights[anti], weights, rtol=1e-13)):
        raise ValueError(f"sphere rule of order {order} is not antipodally symmetric")
    return quad


def sphere_area(d):
    return 2.0 * np.pi if d == 2 else 4.0 * np.pi


def collide(v, v_star, omega):
    """Post-collisional velocities for specular reflection along omega."""
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if np.any(np.abs(np.linalg.norm(omega, axis=-1) - 1.0) > 1e-12):
        raise ValueError("omega must be a unit vector")
    g = ((v - v_star) * omega).sum(axis=-1, keepdims=True)
    return v - g * omega, v_star + g * omega


def velocity_stencil(vgrid, points):
    """Multilinear stencil of off-lattice velocities.

    Returns node indices and weights of shape (P, 2^d).  Corners whose weight
    is exactly zero point at a valid corner of the same cell, so a point that
    sits on a node yields a one-node stencil.  Corners that fall outside the
    ball get index -1.
    """
    vgrid_h = vgrid.h
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u = pts / vgrid_h
    base = np.floor(u + _SNAP_TOL)
    frac = u - base
    frac[np.abs(frac) < _SNAP_TOL] = 0.0
    base = base.astype(np.int64)
    d = vgrid.d
    ncorner = 2 ** d
    idx = np.empty((len(pts), ncorner), dtype=np.int64)
    wts = np.empty((len(pts), ncorner))
    for c in range(ncorner):
        bits = np.array([(c >> a) & 1 for a in range(d)])
        w = np.ones(len(pts))
        corner = base.copy()
        for a in range(d):
            if bits[a]:
                w = w * frac[:, a]
                # zero-weight upper corner collapses onto the lower one
                corner[:, a] += (frac[:, a] > 0).astype(np.int64)
            else:
                w = w * (1.0 - frac[:, a])
        idx[:, c] = vgrid.index_of(corner)
        wts[:, c] = w
    return idx, wts


def _space_weights(sgrid, x):
    """Periodic multilinear stencil in x: (indices, weights) of length 2^d."""
    m = sgrid.m
    if m == 1:
        return np.array([0]), np.array([1.0])
    u = np.asarray(x, dtype=float) * m
    base = np.floor(u)
    frac = u - base
    d = sgrid.d
    idx, wts = [], []
    for c in range(2 ** d):
        flat, w = 0, 1.0
        for a in range(d):
            b = (c >> a) & 1
            k = int(base[a] + b) % m
            flat = flat * m + k
            w *= frac[a] if b else 1.0 - frac[a]
        idx.append(flat)
        wts.append(w)
    return np.array(idx), np.array(wts)


def interpolate(f, x, v):
    """Multilinear value of ``f`` at position x (periodic) and velocity v.

    Corners of the velocity cell lying outside the ball are dropped and the
    remaining weights renormalized, so constants are reproduced everywhere in
    the ball.
    """
    vg = f.vgrid
    v = np.asarray(v, dtype=float)
    if np.linalg.norm(v) > vg.R * (1 + _BALL_TOL):
        raise ValueError(f"velocity {v.tolist()} lies outside the ball of radius {vg.R}")
    vidx, vw = velocity_stencil(vg, v[None, :])
    vidx, vw = vidx[0], vw[0]
    present = vidx >= 0
    if not np.all(present | (vw == 0.0)):
        vw = np.where(present, vw, 0.0)
        vw = vw / vw.sum()
    vidx = np.where(present, vidx, 0)
    xidx, xw = _space_weights(f.sgrid, x)
    table = f.values[np.ix_(xidx, vidx)]
    return float(xw @ table @ vw)
