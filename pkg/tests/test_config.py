import pytest
from hypothesis import given, settings, strategies as st

from hjlab.config import ConfigError, ScenarioConfig, dump_config, from_mapping, load_config, validate

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


def test_defaults_are_the_reference_scenario():
    cfg = validate(ScenarioConfig())
    assert (cfg.d, cfg.R, cfg.n, cfg.m) == (3, 4.0, 9, 1)
    assert (cfg.alpha, cfg.beta, cfg.sigma, cfg.t, cfg.c) == (0.2, 5.0, 1.5, 4.0, 0.01)
    assert cfg.resolved_scheme == "cayley"


@pytest.mark.parametrize("tree,key", [
    ({"velocity": {"nodes_per_axis": 8}}, "velocity.nodes_per_axis"),
    ({"velocity": {"nodes_per_axis": 9.0}}, "velocity.nodes_per_axis"),
    ({"velocty": {"nodes_per_axis": 9}}, "velocty.nodes_per_axis"),
    ({"equilibrium": {"alpha": 0.5}}, "equilibrium.alpha"),
    ({"norms": {"beta": 4}}, "norms.beta"),
    ({"norms": {"sigma": 1.0}}, "norms.sigma"),
    ({"scenario": {"forcing": "decaying"}}, "scenario.forcing"),
    ({"scenario": {"perturbation_scale": 0.5}}, "scenario.perturbation_scale"),
    ({"scenario": {"terminal": "bogus"}}, "scenario.terminal"),
    ({"scenario": {"g_linear": [1.0]}}, "scenario.g_linear"),
    ({"solver": {"scheme": "rk4"}}, "solver.scheme"),
    ({"solver": {"time_step": 0}}, "solver.time_step"),
    ({"grid": {"collision_rule": "exact"}}, "grid.collision_rule"),
    ({"output": {"figures": "yes"}}, "output.figures"),
    ({"verify": {"refinement": [7, 8]}}, "verify.refinement"),
    ({"sweep": {"terminal": ["nope"]}}, "sweep.terminal"),
])
def test_errors_name_the_key(tree, key):
    with pytest.raises(ConfigError) as err:
        from_mapping(tree)
    assert err.value.key == key
    assert key in str(err.value)


def test_theorem2_allows_small_sigma():
    cfg = from_mapping({"scenario": {"regime": "theorem-2", "forcing": "decaying"}, "norms": {"sigma": 0.25}})
    assert cfg.regime == "theorem-2"


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[grid\n")
    with pytest.raises(ConfigError):
        load_config(bad)


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([5, 7, 9, 11]), st.floats(-1.0, 0.45), st.floats(4.5, 9.0), st.floats(0.0, 0.1),
       st.sampled_from(["projected", "raw", "polynomial", "degenerate", "zero"]), st.booleans())
def test_dump_roundtrip(n, alpha, beta, c, terminal, figures):
    cfg = validate(ScenarioConfig(n=n, alpha=alpha, beta=beta, c=c, terminal=terminal, figures=figures,
                                  t_list=(1.0, 2.5), g_linear=(0.1, 0.0, -0.2)))
    back = from_mapping(tomllib.loads(dump_config(cfg)))
    assert back == cfg


def test_with_revalidates():
    with pytest.raises(ConfigError):
        ScenarioConfig().with_(n=4)
