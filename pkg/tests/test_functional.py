import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hjlab.collision import biased_collision
from hjlab.functional import (
    delta_p,
    evaluate_functional,
    functional_base,
    functional_decomposed,
    functional_report,
    hamiltonian,
    hamiltonian_sym,
    hamiltonian_sym_forms,
    hj_residual,
    hj_residual_details,
    stationary_functional,
)
from hjlab.grids import Field
from hjlab.solver import build_problem, solve_coupled

from conftest import solved, tiny_config

seeds = st.integers(0, 2**32 - 1)


def _pair(prob, seed, scale=0.2):
    rng = np.random.default_rng(seed)
    g = prob.g_vals
    return g * (1 + scale * rng.standard_normal(g.shape)), g * (1 + scale * rng.standard_normal(g.shape))


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_hprime_forms_and_symmetrization_agree(seed):
    prob = solved(tiny_config()).prob
    psi, eta = _pair(prob, seed)
    f = hamiltonian_sym_forms(psi, eta, prob.table, prob.sgrid)
    assert np.allclose(f, f[0], rtol=1e-12, atol=1e-18)
    coll = prob.eqs.inner(eta, biased_collision(eta, psi, psi, prob.table))
    assert coll == pytest.approx(2 * f[0], rel=1e-12, abs=1e-18)


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_hprime_vanishes_for_constant_eta(seed):
    prob = solved(tiny_config()).prob
    psi, _ = _pair(prob, seed)
    assert hamiltonian_sym(psi, np.ones_like(psi), prob.table, prob.sgrid) == 0.0


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_hamiltonian_matches_hprime_in_physical_variables(seed):
    # H(psi eta, log eta + a'|v|^2) = H'(psi, eta) on the lattice rule
    prob = solved(tiny_config()).prob
    psi, eta = _pair(prob, seed)
    p = np.log(eta) + prob.eqs.alpha_prime * prob.vgrid.speed2
    h = hamiltonian(psi * eta, p, prob.table, prob.sgrid)
    hs = hamiltonian_sym(psi, eta, prob.table, prob.sgrid)
    assert h == pytest.approx(hs, rel=1e-10, abs=1e-18)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.3, 0.3), st.integers(0, 10**6))
def test_delta_p_vanishes_on_collision_invariants(a, b, c, q, k):
    prob = solved(tiny_config()).prob
    vg, table = prob.vgrid, prob.table
    p = Field.from_velocity(prob.sgrid, vg, a + b * vg.nodes[:, 0] + c * vg.nodes[:, 1] + q * vg.speed2)
    # a lattice-rule collision, so post-collisional velocities are grid nodes
    k %= table.size
    v, vs = vg.nodes[table.i[k]], vg.nodes[table.j[k]]
    w = prob.squad.nodes[table.q[k]]
    assert delta_p(p, v, vs, w) == pytest.approx(0.0, abs=1e-12)


def test_hamiltonian_overflow_guard():
    prob = solved(tiny_config()).prob
    g = prob.g_vals
    with pytest.raises(OverflowError):
        hamiltonian(g, 1000.0 * np.abs(prob.vgrid.nodes[:, 0])[None] * np.ones_like(g), prob.table, prob.sgrid)


def test_zero_scenario_functional():
    sol = solve_coupled(build_problem(tiny_config(c=0.0)))
    base = functional_base(sol.prob.eqs)
    g = sol.prob.g_vals
    # -1 + <G data pairing> for both formulas [TRIVIAL]
    assert base == pytest.approx(-1 + sol.prob.eqs.inner(g, g))
    assert evaluate_functional(sol) == functional_decomposed(sol) == base
    assert stationary_functional(sol.prob.g_hat, sol.prob.eqs) == pytest.approx(base, abs=1e-15)


def test_degenerate_terminal_functional():
    cfg = tiny_config(terminal="degenerate", c=0.01)
    prob = build_problem(cfg)
    # for eta = 1 the decomposed formula reduces to -1 + <psi(t), 1> with H' = 0
    assert stationary_functional(prob.g_hat, prob.eqs) == pytest.approx(
        -1 + prob.eqs.inner(np.exp(prob.eqs.log_M), np.ones_like(prob.g_vals) * np.exp(-prob.eqs.log_B)))


def test_reference_functional(reference_solution):
    rep = functional_report(reference_solution)
    assert rep.relative_discrepancy < 1e-8
    # functional values of the reference scenario at t = 4 [DERIVED: frozen]
    assert rep.i_def == pytest.approx(-0.86667579715970944, abs=1e-14)
    assert rep.i_inf == pytest.approx(-0.86667579715969345, abs=1e-14)
    assert rep.gap == pytest.approx(1.5913857016832498e-14, rel=1e-4)


def test_stationary_closed_form():
    # -1 + (1 - 2 q)^(-d/2) for g = q |v|^2, up to truncation and quadrature error
    cfg = tiny_config(n=9)
    prob = build_problem(cfg)
    g = 0.1 * prob.vgrid.speed2[None]
    assert stationary_functional(g, prob.eqs) == pytest.approx(-1 + 0.8 ** -1, rel=0.02)


def test_stationary_matches_ball_integral():
    # the grid sum converges to the integral over the truncation ball |v| <= R
    from scipy import integrate

    from hjlab.equilibria import make_equilibria
    from hjlab.grids import build_space_grid, build_velocity_grid

    vg = build_velocity_grid(3, 4.0, 13)
    eqs = make_equilibria(vg, build_space_grid(3, 1), 0.2)
    ball = -1 + integrate.quad(lambda r: (2 * np.pi) ** -1.5 * np.exp(-0.4 * r * r) * 4 * np.pi * r * r, 0, 4)[0]
    assert stationary_functional(0.1 * vg.speed2[None], eqs) == pytest.approx(ball, rel=0.005)


def test_hj_residual_small_and_first_order():
    # the solver step must resolve delta_t for the difference quotient to be first order
    cfg = tiny_config(t=1.0, delta=0.025)
    r1 = hj_residual_details(cfg, [1.0], 0.1)[0]
    r2 = hj_residual_details(cfg, [1.0], 0.05)[0]
    assert r2.relative < 0.1
    assert r1.residual / r2.residual == pytest.approx(2.0, rel=0.3)
    assert hj_residual(cfg, [1.0], 0.1) == [r1.residual]


def test_unconverged_solution_rejected():
    sol = solve_coupled(build_problem(tiny_config()), tol=1e-30, max_iter=1)
    with pytest.raises(ValueError):
        evaluate_functional(sol)
