import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjlab.collision import (
    biased_collision,
    build_collision_table,
    collision_frequency,
    linearized_K,
    linearized_matrix,
    nonlinearity,
)
from hjlab.equilibria import kernel_basis, make_equilibria
from hjlab.grids import Field, build_space_grid, build_sphere_quadrature, build_velocity_grid
from hjlab.oracle import collision_triples, oracle_collision

VG = build_velocity_grid(3, 4.0, 9)
SQ = build_sphere_quadrature(3, 7)
SG = build_space_grid(3, 1)
TABLE = build_collision_table(VG, SQ)
EQS = make_equilibria(VG, SG, 0.2)
G = np.exp(EQS.log_G)

VG2 = build_velocity_grid(2, 4.0, 5)
SQ2 = build_sphere_quadrature(2, 8)

seeds = st.integers(0, 2**32 - 1)


def _rand(seed, k=3):
    rng = np.random.default_rng(seed)
    return [G * (1 + 0.2 * rng.standard_normal(VG.size)) for _ in range(k)]


def test_table_sizes():
    # retained triples on the reference grid [DERIVED: frozen from the builder, checked by the oracle on d = 2]
    assert TABLE.size == 278432
    assert build_collision_table(VG2, SQ2).size == len(collision_triples(VG2, SQ2)) == 260
    assert build_collision_table(VG2, SQ2, "interpolated").size == len(
        collision_triples(VG2, SQ2, "interpolated")) == 276


def test_table_rejects_bad_rule_and_dimension():
    with pytest.raises(ValueError):
        build_collision_table(VG, SQ, "bogus")
    with pytest.raises(ValueError):
        build_collision_table(VG2, SQ)
    with pytest.raises(ValueError):
        build_collision_table(VG, build_sphere_quadrature(3, 11), "lattice")


def test_lazy_table_matches_stored():
    lazy = build_collision_table(VG, SQ, lazy=True, block=40)
    a, b, e = _rand(3)
    assert lazy.size == TABLE.size
    assert np.allclose(biased_collision(e, a, b, lazy), biased_collision(e, a, b, TABLE), rtol=0, atol=1e-16)


def test_zero_inputs_give_zero():
    z = np.zeros(VG.size)
    assert np.all(biased_collision(G, z, z, TABLE) == 0)
    assert np.all(biased_collision(z, G, G, TABLE) == 0)


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_swap_symmetry_is_exact(seed):
    a, b, e = _rand(seed)
    assert np.array_equal(biased_collision(e, a, b, TABLE), biased_collision(e, b, a, TABLE))


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_collision_invariants_are_conserved(seed):
    # <G h, Q_G(f, f)> = 0 for h in {1, v, |v|^2}: the lattice rule keeps it to roundoff
    a, b, e = _rand(seed)
    q = biased_collision(G, a, b, TABLE)
    scale = EQS.inner(G[None], np.abs(q)[None])
    for h in [np.ones(VG.size), VG.nodes[:, 0], VG.nodes[:, 2], VG.speed2]:
        assert abs(EQS.inner((G * h)[None], q[None])) < 1e-13 * scale * (1 + np.abs(h).max())


@settings(max_examples=10, deadline=None)
@given(seeds, st.floats(-2, 2), st.floats(-2, 2))
def test_bilinearity(seed, s, t):
    a, b, e = _rand(seed)
    lhs = biased_collision(e, s * a + t * b, G, TABLE)
    rhs = s * biased_collision(e, a, G, TABLE) + t * biased_collision(e, b, G, TABLE)
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-17)


def test_equilibrium_and_degenerate_identities():
    nu = collision_frequency(EQS, TABLE).values[0]
    assert np.abs(biased_collision(G, G, G, TABLE)).max() < 1e-13 * (nu * G).max()
    ones = np.ones(VG.size)
    a, _, _ = _rand(7)
    assert np.all(biased_collision(a, ones, ones, TABLE) == 0)


def test_collision_frequency_positive():
    nu = collision_frequency(EQS, TABLE).values[0]
    # range of nu on the reference grid [DERIVED]
    assert nu.min() == pytest.approx(0.74494919011555605, rel=1e-12)
    assert nu.max() == pytest.approx(1.4153369721421902, rel=1e-12)


def test_linearized_operator_kernel_and_gap():
    L = linearized_matrix(EQS, TABLE)
    basis = kernel_basis(EQS)
    for k in basis.vectors:
        assert np.abs(L @ k[0]).max() < 1e-15
    ev = np.sort(-np.linalg.eigvals(L).real)
    assert np.all(np.abs(ev[:5]) < 1e-13)
    # spectral gap of the reference discretization [DERIVED]
    assert ev[5] == pytest.approx(0.344251208, rel=1e-6)
    f = _rand(11)[0]
    assert np.allclose(linearized_K(f, EQS, TABLE), L @ f + collision_frequency(EQS, TABLE).values[0] * f)


def test_field_arguments_and_grid_mismatch():
    f = Field.from_velocity(SG, VG, G)
    out = biased_collision(f, f, f, TABLE)
    assert isinstance(out, Field)
    other = Field.from_velocity(build_space_grid(3, 1), VG, G)
    with pytest.raises(ValueError):
        biased_collision(f, other, f, TABLE)


def test_nonlinearity_expansion():
    a, b, _ = _rand(5)
    pp, ep = 0.1 * (a - G), 0.1 * (b - G)
    # Q_eta(psi, psi) - Q_G(G, G) - linear part = N when psi = G + pp, eta = G + ep
    full = biased_collision(G + ep, G + pp, G + pp, TABLE)
    lin = 2 * biased_collision(G, pp, G, TABLE)
    assert np.allclose(nonlinearity(pp, ep, EQS, TABLE), full - lin, atol=1e-17)


@pytest.mark.parametrize("rule", ["lattice", "interpolated"])
def test_matches_oracle_on_tiny_instance(rule):
    table = build_collision_table(VG2, SQ2, rule)
    rng = np.random.default_rng(0)
    e, a, b = rng.standard_normal((3, 2, VG2.size))
    assert np.abs(biased_collision(e, a, b, table) - oracle_collision(e, a, b, VG2, SQ2, rule)).max() < 1e-13


def test_interpolated_rule_equilibrium_defect_baseline():
    # sup |Q_G(G, G)| on the d = 2, n = 5 grid: the invariance defect of the interpolated rule [DERIVED by the oracle]
    eqs = make_equilibria(VG2, build_space_grid(2, 1), 0.2)
    g = np.exp(eqs.log_G)
    q = biased_collision(g, g, g, build_collision_table(VG2, SQ2, "interpolated"))
    assert np.abs(q).max() == pytest.approx(0.014875868841982533, rel=1e-12)
