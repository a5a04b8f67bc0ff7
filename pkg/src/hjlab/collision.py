"""Tabulated hard-sphere collision quadrature and the biased collision operator.

A collision table lists retained triples (v, v*, omega) with
(v* - v).omega > 0 together with interpolation stencils for the
post-collisional velocities.  Two retention rules are available:

``interpolated``
    every triple whose post-collisional velocities and their multilinear
    stencils stay inside the ball; primed values are interpolated.
``lattice``
    only triples whose post-collisional velocities are lattice nodes; the
    weight of a direction omega = u/|u| (u an integer vector) is multiplied by
    |u|^2, the inverse fraction of partners that land on the lattice.  The
    discrete collision map is then an exact involution of the table, so every
    symmetry of the continuous operator holds to roundoff.
"""

from dataclasses import dataclass
from functools import cached_property

import numba
import numpy as np

from .grids import Field, velocity_stencil

RULES = ("interpolated", "lattice")


@dataclass(eq=False)
class CollisionTable:
    vgrid: object
    squad: object
    rule: str
    i: np.ndarray  # output node v
    j: np.ndarray  # partner node v*
    q: np.ndarray  # sphere node
    weight: np.ndarray  # ((v*-v).omega)_+ w_omega dv^d (times |u|^2 for lattice)
    p_idx: np.ndarray  # stencil of v', shape (E, S)
    p_w: np.ndarray
    s_idx: np.ndarray  # stencil of v*', shape (E, S)
    s_w: np.ndarray

    @property
    def size(self):
        return len(self.i)

    def blocks(self):
        yield self


class LazyCollisionTable:
    """Table regenerated block by block on every pass; for grids too big to store."""

    def __init__(self, vgrid, squad, rule, block=16):
        self.vgrid = vgrid
        self.squad = squad
        self.rule = rule
        self.block = block

    def blocks(self):
        for start in range(0, self.vgrid.size, self.block):
            stop = min(start + self.block, self.vgrid.size)
            yield _build_block(self.vgrid, self.squad, self.rule, np.arange(start, stop))

    @cached_property
    def size(self):
        return sum(b.size for b in self.blocks())


def _build_block(vgrid, squad, rule, out_nodes):
    h = vgrid.h
    V = vgrid.size
    lat = vgrid.lattice
    vel = vgrid.nodes
    parts = []
    if rule == "lattice":
        dirs = squad.lattice_directions
        if dirs is None:
            raise ValueError(
                f"sphere rule of order {squad.order} has directions off the lattice; "
                "the lattice collision rule needs rational directions"
            )
    for qi in range(squad.size):
        om = squad.nodes[qi]
        if rule == "lattice":
            u = dirs[qi]
            u2 = int(u @ u)
            dot = (lat[None, :, :] - lat[out_nodes, None, :]) @ u  # (B, V) integers
            ii, jj = np.nonzero((dot > 0) & (dot % u2 == 0))
            tq = (dot[ii, jj] // u2)[:, None]
            kp = lat[out_nodes[ii]] + tq * u
            ks = lat[jj] - tq * u
            pi = vgrid.index_of(kp)
            si = vgrid.index_of(ks)
            ok = (pi >= 0) & (si >= 0)
            ii, jj, pi, si = ii[ok], jj[ok], pi[ok], si[ok]
            g = dot[ii, jj] * (h / np.sqrt(u2))
            w = g * squad.weights[qi] * u2 * vgrid.cell_volume
            p_idx, p_w = pi[:, None], np.ones((len(pi), 1))
            s_idx, s_w = si[:, None], np.ones((len(si), 1))
        else:
            gmat = (vel[None, :, :] - vel[out_nodes, None, :]) @ om  # (v*-v).omega
            ii, jj = np.nonzero(gmat > 1e-12 * h)
            g = gmat[ii, jj]
            vp = vel[out_nodes[ii]] + g[:, None] * om
            vs = vel[jj] - g[:, None] * om
            R2 = vgrid.R ** 2 * (1 + 1e-12)
            ok = ((vp ** 2).sum(1) <= R2) & ((vs ** 2).sum(1) <= R2)
            ii, jj, g, vp, vs = ii[ok], jj[ok], g[ok], vp[ok], vs[ok]
            p_idx, p_w = velocity_stencil(vgrid, vp)
            s_idx, s_w = velocity_stencil(vgrid, vs)
            ok = np.all(p_idx >= 0, axis=1) & np.all(s_idx >= 0, axis=1)
            ii, jj, g = ii[ok], jj[ok], g[ok]
            p_idx, p_w, s_idx, s_w = p_idx[ok], p_w[ok], s_idx[ok], s_w[ok]
            w = g * squad.weights[qi] * vgrid.cell_volume
        parts.append((out_nodes[ii], jj, np.full(len(ii), qi), w, p_idx, p_w, s_idx, s_w))
    cols = [np.concatenate([p[k] for p in parts]) for k in range(8)]
    order = np.argsort(cols[0], kind="stable")
    i, j, q, w, p_idx, p_w, s_idx, s_w = (c[order] for c in cols)
    return CollisionTable(
        vgrid, squad, rule,
        i.astype(np.int64), j.astype(np.int64), q.astype(np.int64), w,
        p_idx.astype(np.int64), p_w, s_idx.astype(np.int64), s_w,
    )


def build_collision_table(vgrid, squad, rule="lattice", lazy=False, block=16):
    if rule not in RULES:
        raise ValueError(f"unknown collision rule {rule!r}; expected one of {RULES}")
    if squad.d != vgrid.d:
        raise ValueError("sphere quadrature and velocity grid differ in dimension")
    if lazy:
        return LazyCollisionTable(vgrid, squad, rule, block)
    return _build_block(vgrid, squad, rule, np.arange(vgrid.size))


def _rows(a, V):
    return a.reshape(-1, V)


def _check_fields(*fields):
    grids = [(f.sgrid, f.vgrid) for f in fields if isinstance(f, Field)]
    if grids and any(g[0] is not grids[0][0] or g[1] is not grids[0][1] for g in grids):
        raise ValueError("collision arguments live on different grids")


@numba.njit(cache=True, parallel=True)
def _collide_rows(e, p1, p2, i, j, p_idx, p_w, s_idx, s_w, hw, out):
    rows = e.shape[0]
    nent = i.shape[0]
    width = p_idx.shape[1]
    for r in numba.prange(rows):
        er, a, b, o = e[r], p1[r], p2[r], out[r]
        for k in range(nent):
            ii, jj = i[k], j[k]
            if width == 1:
                a_p, a_s = a[p_idx[k, 0]], a[s_idx[k, 0]]
                b_p, b_s = b[p_idx[k, 0]], b[s_idx[k, 0]]
            else:
                a_p = 0.0
                a_s = 0.0
                b_p = 0.0
                b_s = 0.0
                for c in range(width):
                    a_p += a[p_idx[k, c]] * p_w[k, c]
                    a_s += a[s_idx[k, c]] * s_w[k, c]
                    b_p += b[p_idx[k, c]] * p_w[k, c]
                    b_s += b[s_idx[k, c]] * s_w[k, c]
            # grouped so that swapping psi1 and psi2 is bit-exact
            gain = a_p * b_s + b_p * a_s
            loss = a[ii] * b[jj] + b[ii] * a[jj]
            o[ii] += hw[k] * er[jj] * (gain - loss)


def biased_collision(eta, psi1, psi2, table):
    """Q_eta(psi1, psi2) on every (x, v) node.

    Arguments are Fields or arrays whose trailing axis is the velocity node;
    leading axes (time, space) broadcast together and are kept.  Each output
    node accumulates its table entries sequentially in table order.
    """
    _check_fields(eta, psi1, psi2)
    template = next((f for f in (eta, psi1, psi2) if isinstance(f, Field)), None)
    a = [f.values if isinstance(f, Field) else np.asarray(f, dtype=float) for f in (eta, psi1, psi2)]
    e, p1, p2 = np.broadcast_arrays(*a)
    shape = e.shape
    V = shape[-1]
    e, p1, p2 = (np.ascontiguousarray(_rows(x, V)) for x in (e, p1, p2))
    out = np.zeros_like(e)
    for blk in table.blocks():
        if blk.size:
            _collide_rows(e, p1, p2, blk.i, blk.j, blk.p_idx, blk.p_w,
                          blk.s_idx, blk.s_w, 0.5 * blk.weight, out)
    out = out.reshape(shape)
    if template is not None and out.shape == template.values.shape:
        return Field(template.sgrid, template.vgrid, out)
    return out


def collision_frequency(eqs, table):
    """nu(v) = sum over the table of w G(v*)^2, as a spatially constant Field."""
    g2 = np.exp(2.0 * eqs.log_G)
    nu = np.zeros(eqs.vgrid.size)
    for blk in table.blocks():
        nu += np.bincount(blk.i, weights=blk.weight * g2[blk.j], minlength=eqs.vgrid.size)
    return Field.from_velocity(eqs.sgrid, eqs.vgrid, nu)


def _vals(f):
    return f.values if isinstance(f, Field) else np.asarray(f, dtype=float)


def linearized_K(f, eqs, table, nu=None):
    """K f = 2 Q_G(f, G) + nu f."""
    if nu is None:
        nu = collision_frequency(eqs, table)
    g = np.exp(eqs.log_G)
    q = biased_collision(g, _vals(f), g, table)
    out = 2.0 * _vals(q) + _vals(nu)[0] * _vals(f)
    if isinstance(f, Field):
        return Field(f.sgrid, f.vgrid, out)
    return out


def linearized_matrix(eqs, table):
    """Dense velocity-space matrix of f -> 2 Q_G(f, G) (homogeneous mode)."""
    V = eqs.vgrid.size
    g = np.exp(eqs.log_G)
    cols = biased_collision(g, np.eye(V), g, table)
    # row k of ``cols`` is the image of the k-th unit vector
    return 2.0 * cols.T


def nonlinearity(psi_p, eta_p, eqs, table):
    """N[psi_p, eta_p] = 2 Q_{eta_p}(psi_p, G) + Q_G(psi_p, psi_p) + Q_{eta_p}(psi_p, psi_p)."""
    g = np.exp(eqs.log_G)
    ps, et = _vals(psi_p), _vals(eta_p)
    t1 = _vals(biased_collision(et, ps, g, table))
    t2 = _vals(biased_collision(g, ps, ps, table))
    t3 = _vals(biased_collision(et, ps, ps, table))
    out = 2.0 * t1 + t2 + t3
    if isinstance(psi_p, Field):
        return Field(psi_p.sgrid, psi_p.vgrid, out)
    return out
