"""Scenario configuration: TOML file with dotted sections, strict key checking."""

from dataclasses import dataclass, fields, replace
import math

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

REGIMES = ("theorem-1", "theorem-2")
INITIAL_PRESETS = ("projected", "raw", "zero")
TERMINAL_PRESETS = ("projected", "raw", "polynomial", "degenerate", "zero")
FORCING_PRESETS = ("none", "decaying")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending dotted key."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# dotted key -> (attribute, type, default)
_SCHEMA = {
    "grid.dimension": ("d", int, 3),
    "grid.radius": ("R", float, 4.0),
    "grid.space_nodes": ("m", int, 1),
    "grid.sphere_order": ("sphere_order", int, 7),
    "grid.collision_rule": ("collision_rule", str, "lattice"),
    "velocity.nodes_per_axis": ("n", int, 9),
    "equilibrium.alpha": ("alpha", float, 0.2),
    "norms.beta": ("beta", float, 5.0),
    "norms.sigma": ("sigma", float, 1.5),
    "scenario.regime": ("regime", str, "theorem-1"),
    "scenario.t": ("t", float, 4.0),
    "scenario.perturbation_scale": ("c", float, 0.01),
    "scenario.perturbation_bound": ("c_bound", float, 0.1),
    "scenario.initial": ("initial", str, "projected"),
    "scenario.terminal": ("terminal", str, "projected"),
    "scenario.modulation": ("modulation", float, 0.0),
    "scenario.g_constant": ("g_constant", float, 0.0),
    "scenario.g_linear": ("g_linear", list, []),
    "scenario.g_quadratic": ("g_quadratic", float, 0.0),
    "scenario.g_cosine": ("g_cosine", float, 0.0),
    "scenario.forcing": ("forcing", str, "none"),
    "scenario.forcing_bound": ("forcing_bound", float, 0.0),
    "scenario.seed": ("seed", int, 0),
    "scenario.t_list": ("t_list", list, [2.0, 4.0, 8.0]),
    "scenario.delta_t": ("delta_t", float, 0.05),
    "solver.time_step": ("delta", float, 0.05),
    "solver.substep": ("delta_sub", float, 0.01),
    "solver.scheme": ("scheme", str, "auto"),
    "solver.tolerance": ("tol", float, 1e-9),
    "solver.max_iterations": ("max_iter", int, 100),
    "output.dir": ("out_dir", str, "hjlab-out"),
    "output.figures": ("figures", bool, True),
    "sweep.t": ("sweep_t", list, []),
    "sweep.alpha": ("sweep_alpha", list, []),
    "sweep.perturbation_scale": ("sweep_c", list, []),
    "sweep.terminal": ("sweep_terminal", list, []),
    "verify.refinement": ("refinement", list, []),
    "verify.oracle_nodes": ("oracle_nodes", int, 3),
}

_ATTR_TO_KEY = {v[0]: k for k, v in _SCHEMA.items()}


@dataclass(frozen=True)
class ScenarioConfig:
    d: int = 3
    R: float = 4.0
    m: int = 1
    sphere_order: int = 7
    collision_rule: str = "lattice"
    n: int = 9
    alpha: float = 0.2
    beta: float = 5.0
    sigma: float = 1.5
    regime: str = "theorem-1"
    t: float = 4.0
    c: float = 0.01
    c_bound: float = 0.1
    initial: str = "projected"
    terminal: str = "projected"
    modulation: float = 0.0
    g_constant: float = 0.0
    g_linear: tuple = ()
    g_quadratic: float = 0.0
    g_cosine: float = 0.0
    forcing: str = "none"
    forcing_bound: float = 0.0
    seed: int = 0
    t_list: tuple = (2.0, 4.0, 8.0)
    delta_t: float = 0.05
    delta: float = 0.05
    delta_sub: float = 0.01
    scheme: str = "auto"
    tol: float = 1e-9
    max_iter: int = 100
    out_dir: str = "hjlab-out"
    figures: bool = True
    sweep_t: tuple = ()
    sweep_alpha: tuple = ()
    sweep_c: tuple = ()
    sweep_terminal: tuple = ()
    refinement: tuple = ()
    oracle_nodes: int = 3

    def with_(self, **kw):
        return validate(replace(self, **kw))

    @property
    def resolved_scheme(self):
        return "cayley" if self.scheme == "auto" else self.scheme

    def items(self):
        """(dotted key, value) pairs in schema order."""
        for key, (attr, _, _) in _SCHEMA.items():
            yield key, getattr(self, attr)


def _flatten(tree, prefix=""):
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def _coerce(key, typ, value):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if typ is list:
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return tuple(value)
    raise AssertionError(typ)


def from_mapping(tree):
    kw = {}
    for key, value in _flatten(tree):
        if key not in _SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        attr, typ, _ = _SCHEMA[key]
        kw[attr] = _coerce(key, typ, value)
    return validate(ScenarioConfig(**kw))


def load_config(path):
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"malformed file {path}: {exc}") from exc
    return from_mapping(tree)


def _fail(attr, message):
    raise ConfigError(_ATTR_TO_KEY[attr], message)


def _numbers(cfg, attr, positive=False):
    for x in getattr(cfg, attr):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
            _fail(attr, f"expected finite numbers, got {x!r}")
        if positive and x <= 0:
            _fail(attr, f"entries must be positive, got {x!r}")


def validate(cfg):
    if cfg.d not in (2, 3):
        _fail("d", f"must be 2 or 3, got {cfg.d}")
    if not cfg.R > 0:
        _fail("R", f"must be positive, got {cfg.R}")
    if cfg.n < 3 or cfg.n % 2 == 0:
        _fail("n", f"must be an odd integer >= 3, got {cfg.n}")
    if cfg.m < 1:
        _fail("m", f"must be >= 1, got {cfg.m}")
    if cfg.sphere_order < 2:
        _fail("sphere_order", f"must be >= 2, got {cfg.sphere_order}")
    if cfg.collision_rule not in ("lattice", "interpolated"):
        _fail("collision_rule", f"must be 'lattice' or 'interpolated', got {cfg.collision_rule!r}")
    if not cfg.alpha < 0.5:
        _fail("alpha", f"must be < 1/2, got {cfg.alpha}")
    if not cfg.beta > 4:
        _fail("beta", f"must exceed 4, got {cfg.beta}")
    if cfg.regime not in REGIMES:
        _fail("regime", f"must be one of {REGIMES}, got {cfg.regime!r}")
    if cfg.regime == "theorem-1":
        if not cfg.sigma > 1:
            _fail("sigma", f"theorem-1 runs need sigma > 1, got {cfg.sigma}")
        if cfg.forcing != "none":
            _fail("forcing", "theorem-1 runs need forcing = 'none'")
    elif not cfg.sigma > 0:
        _fail("sigma", f"theorem-2 runs need sigma > 0, got {cfg.sigma}")
    if not cfg.t >= 0:
        _fail("t", f"must be >= 0, got {cfg.t}")
    if not cfg.c >= 0:
        _fail("c", f"must be >= 0, got {cfg.c}")
    if not cfg.c <= cfg.c_bound:
        _fail("c", f"{cfg.c} exceeds scenario.perturbation_bound = {cfg.c_bound}")
    if cfg.initial not in INITIAL_PRESETS:
        _fail("initial", f"must be one of {INITIAL_PRESETS}, got {cfg.initial!r}")
    if cfg.terminal not in TERMINAL_PRESETS:
        _fail("terminal", f"must be one of {TERMINAL_PRESETS}, got {cfg.terminal!r}")
    if cfg.forcing not in FORCING_PRESETS:
        _fail("forcing", f"must be one of {FORCING_PRESETS}, got {cfg.forcing!r}")
    if not cfg.forcing_bound >= 0:
        _fail("forcing_bound", "must be >= 0")
    if len(cfg.g_linear) not in (0, cfg.d):
        _fail("g_linear", f"needs {cfg.d} entries, got {len(cfg.g_linear)}")
    _numbers(cfg, "g_linear")
    if not cfg.delta > 0:
        _fail("delta", f"must be positive, got {cfg.delta}")
    if not cfg.delta_sub > 0:
        _fail("delta_sub", f"must be positive, got {cfg.delta_sub}")
    if cfg.scheme not in ("auto", "expeuler", "cayley"):
        _fail("scheme", f"must be auto, expeuler or cayley, got {cfg.scheme!r}")
    if not cfg.tol > 0:
        _fail("tol", f"must be positive, got {cfg.tol}")
    if cfg.max_iter < 1:
        _fail("max_iter", f"must be >= 1, got {cfg.max_iter}")
    if not cfg.delta_t > 0:
        _fail("delta_t", f"must be positive, got {cfg.delta_t}")
    _numbers(cfg, "t_list")
    for x in cfg.t_list:
        if x < 0:
            _fail("t_list", f"times must be >= 0, got {x}")
    _numbers(cfg, "sweep_t")
    _numbers(cfg, "sweep_alpha")
    _numbers(cfg, "sweep_c")
    for x in cfg.sweep_terminal:
        if x not in TERMINAL_PRESETS:
            _fail("sweep_terminal", f"unknown terminal preset {x!r}")
    for x in cfg.refinement:
        if isinstance(x, bool) or not isinstance(x, int) or x < 3 or x % 2 == 0:
            _fail("refinement", f"entries must be odd integers >= 3, got {x!r}")
    if cfg.oracle_nodes not in (3, 5):
        _fail("oracle_nodes", f"must be 3 or 5, got {cfg.oracle_nodes}")
    return cfg


def dump_config(cfg):
    """Resolved configuration as TOML text in schema order."""
    sections = {}
    for key, value in cfg.items():
        sec, name = key.split(".", 1)
        sections.setdefault(sec, []).append((name, value))
    lines = []
    for sec, entries in sections.items():
        lines.append(f"[{sec}]")
        for name, value in entries:
            lines.append(f"{name} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def field_names():
    return [f.name for f in fields(ScenarioConfig)]
