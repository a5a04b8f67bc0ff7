import warnings

import pytest

from hjlab.config import ScenarioConfig, validate
from hjlab.solver import build_problem, solve_coupled

warnings.filterwarnings("ignore", message=".*TBB.*")

_SOLVED = {}


def solved(cfg):
    """Converged solution of ``cfg``, shared across the session."""
    if cfg not in _SOLVED:
        _SOLVED[cfg] = solve_coupled(build_problem(cfg))
    return _SOLVED[cfg]


def tiny_config(**kw):
    """d = 2, n = 5 lattice-rule scenario that solves in well under a second."""
    base = dict(d=2, n=5, sphere_order=8, t=1.0, delta=0.1, t_list=(0.5, 1.0))
    base.update(kw)
    return validate(ScenarioConfig(**base))


@pytest.fixture(scope="session")
def reference_cfg():
    return validate(ScenarioConfig())


@pytest.fixture(scope="session")
def reference_solution(reference_cfg):
    return solved(reference_cfg)


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def tiny_solution(tiny_cfg):
    return solved(tiny_cfg)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
