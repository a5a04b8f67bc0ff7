"""Command line entry point: hjlab verify|solve|functional|sweep.

Every run writes into one directory: CSV tables whose first line is
``# run_id = ...``, optional PNG figures, and ``manifest.txt``.  The run
identifier is a hash of the command and the resolved configuration, so
identical reruns produce identical files.
"""

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
import hashlib
import itertools
import math
import multiprocessing
import os
from pathlib import Path
import platform
import sys
import traceback

from . import __version__
from .config import ConfigError, dump_config, load_config

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_INTERNAL = 0, 1, 2, 3

TRAJECTORY_COLUMNS = ["s", "sup_psi_p", "sup_eta_p", "beta_norm_psi_p", "beta_norm_eta_p",
                      "scaled_psi_p", "scaled_eta_p"]
HISTORY_COLUMNS = ["iterate", "delta_psi", "delta_eta", "ratio"]
FUNCTIONAL_COLUMNS = ["t", "I_def", "I_decomp", "discrepancy", "I_inf", "gap", "residual",
                      "relative_residual"]
SWEEP_COLUMNS = ["point", "t", "alpha", "perturbation_scale", "terminal", "status", "iterations",
                 "I_def", "I_decomp", "discrepancy", "I_inf", "gap", "residual", "relative_residual"]
REFINEMENT_COLUMNS = ["n", "h", "conservation", "equilibrium", "hprime", "stationary"]


class Diverged(RuntimeError):
    """The coupled solve did not converge."""


def fmt(x):
    """17 significant digits for floats; everything else as text."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "%.17g" % x
    if hasattr(x, "dtype"):
        return fmt(x.item())
    return str(x)


def _quote(s):
    return '"' + str(s).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ") + '"'


def run_identifier(command, cfg):
    text = f"command = {command}\n" + dump_config(cfg)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunWriter:
    """Serializes all file writes of one run directory and keeps the inventory."""

    def __init__(self, out_dir, command, cfg, threads):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.threads = threads
        self.run_id = run_identifier(command, cfg)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.dir / name

    def csv(self, name, columns, rows):
        with open(self.path(name), "w", newline="") as fh:
            fh.write(f"# run_id = {self.run_id}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([fmt(x) for x in row])

    def text(self, name, lines):
        with open(self.path(name), "w") as fh:
            fh.write(f"run_id = {_quote(self.run_id)}\n")
            fh.write("\n".join(lines) + "\n")

    def figure(self, name, func, *args):
        if not self.cfg.figures:
            return
        func(self.path(name), *args, self.run_id)

    def manifest(self, status, summary=()):
        import matplotlib
        import numba
        import numpy
        import scipy

        epoch = os.environ.get("SOURCE_DATE_EPOCH")
        lines = [
            f"run_id = {_quote(self.run_id)}",
            f"command = {_quote(self.command)}",
            f"status = {_quote(status)}",
            f"created = {_quote(epoch if epoch else 'unset')}",
            f"threads = {self.threads}",
            "",
            "[versions]",
            f"hjlab = {_quote(__version__)}",
            f"python = {_quote(platform.python_version())}",
            f"numpy = {_quote(numpy.__version__)}",
            f"scipy = {_quote(scipy.__version__)}",
            f"numba = {_quote(numba.__version__)}",
            f"matplotlib = {_quote(matplotlib.__version__)}",
            "",
            "[summary]",
        ]
        lines += [f"{k} = {_value(v)}" for k, v in summary]
        lines += ["", "[files]"]
        lines += [f"{_quote(name)} = {_quote(_sha256(self.dir / name))}" for name in self.files]
        lines += ["", "# resolved configuration", ""]
        for line in dump_config(self.cfg).splitlines():
            lines.append(line.replace("[", "[config.", 1) if line.startswith("[") else line)
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _value(v):
    if isinstance(v, str):
        return _quote(v)
    return fmt(v)


def _set_threads(n):
    import numba

    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


# ---------------------------------------------------------------- commands


def cmd_solve(cfg, writer):
    from .plots import decay_figure, history_figure
    from .solver import build_problem, decay_report, solve_coupled

    sol = solve_coupled(build_problem(cfg))
    writer.csv("history.csv", HISTORY_COLUMNS, sol.history)
    summary = [("converged", sol.converged), ("iterations", sol.iterations), ("residual", sol.residual)]
    if not sol.converged:
        writer.manifest("diverged", summary + [("reason", sol.reason)])
        raise Diverged(sol.reason)
    rep = decay_report(sol)
    rows = zip(rep.times, rep.sup_psi, rep.sup_eta, rep.beta_psi, rep.beta_eta, rep.scaled_psi, rep.scaled_eta)
    writer.csv("trajectory.csv", TRAJECTORY_COLUMNS, rows)
    writer.figure("decay.png", decay_figure, rep)
    writer.figure("history.png", history_figure, sol.history)
    summary += [("psi_norm", rep.psi_norm), ("eta_norm", rep.eta_norm),
                ("min_psi", sol.min_psi), ("min_eta", sol.min_eta)]
    writer.manifest("ok", summary)
    return EXIT_OK


def functional_rows(cfg):
    """One row per t in the t-list; raises Diverged on a failed solve."""
    from .functional import functional_report, hj_residual_details
    from .solver import build_problem, solve_coupled

    cache = {}
    rows = []
    for t in cfg.t_list:
        key = round(float(t), 12)
        sol = solve_coupled(build_problem(cfg.with_(t=float(t))))
        if not sol.converged:
            raise Diverged(f"t = {t}: {sol.reason}")
        cache[key] = sol
        rep = functional_report(sol)
        try:
            res = hj_residual_details(cfg, [float(t)], cfg.delta_t, solutions=cache)[0]
        except ValueError as exc:
            raise Diverged(f"t = {t} + delta_t: {exc}") from exc
        rows.append([float(t), rep.i_def, rep.i_decomp, rep.discrepancy, rep.i_inf, rep.gap,
                     res.residual, res.relative])
    return rows


def cmd_functional(cfg, writer):
    from .plots import functional_figure

    try:
        rows = functional_rows(cfg)
    except Diverged as exc:
        writer.manifest("diverged", [("reason", str(exc))])
        raise
    writer.csv("functional.csv", FUNCTIONAL_COLUMNS, rows)
    writer.figure("functional.png", functional_figure, [r[0] for r in rows], [r[5] for r in rows],
                  [r[6] for r in rows])
    gaps = [r[5] for r in rows]
    summary = [("points", len(rows)),
               ("gap_nonincreasing", all(b <= a for a, b in zip(gaps, gaps[1:]))),
               ("max_relative_discrepancy", max((r[3] / max(abs(r[1]), abs(r[2])) for r in rows), default=0.0))]
    writer.manifest("ok", summary)
    return EXIT_OK


def sweep_points(cfg):
    ts = cfg.sweep_t or (cfg.t,)
    alphas = cfg.sweep_alpha or (cfg.alpha,)
    cs = cfg.sweep_c or (cfg.c,)
    terms = cfg.sweep_terminal or (cfg.terminal,)
    return [dict(t=float(t), alpha=float(a), c=float(c), terminal=g)
            for t, a, c, g in itertools.product(ts, alphas, cs, terms)]


def sweep_point(args):
    """Evaluate one sweep point; failures become a status, never an exception."""
    import warnings

    warnings.filterwarnings("ignore", module="numba")
    cfg, index, point = args
    from .functional import functional_report, hj_residual_details
    from .solver import build_problem, solve_coupled

    head = [index, point["t"], point["alpha"], point["c"], point["terminal"]]
    nan = math.nan
    try:
        pc = cfg.with_(**point)
        sol = solve_coupled(build_problem(pc))
        if not sol.converged:
            return head + ["diverged", sol.iterations] + [nan] * 7
        rep = functional_report(sol)
        res = hj_residual_details(pc, [pc.t], pc.delta_t, solutions={round(pc.t, 12): sol})[0]
        return head + ["ok", sol.iterations, rep.i_def, rep.i_decomp, rep.discrepancy, rep.i_inf,
                       rep.gap, res.residual, res.relative]
    except ConfigError as exc:
        return head + [f"invalid: {exc}", 0] + [nan] * 7
    except (ValueError, ArithmeticError) as exc:
        return head + [f"failed: {type(exc).__name__}", 0] + [nan] * 7


def cmd_sweep(cfg, writer):
    from .plots import sweep_figure

    points = sweep_points(cfg)
    jobs = [(cfg, k, p) for k, p in enumerate(points)]
    workers = min(writer.threads, len(jobs))
    if workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_set_threads,
                                 initargs=(1,)) as pool:
            rows = list(pool.map(sweep_point, jobs))
    else:
        rows = [sweep_point(j) for j in jobs]
    writer.csv("sweep.csv", SWEEP_COLUMNS, rows)
    writer.figure("sweep.png", sweep_figure, [r[0] for r in rows], [r[10] for r in rows])
    ok = sum(1 for r in rows if r[5] == "ok")
    writer.manifest("ok", [("points", len(rows)), ("converged_points", ok), ("failed_points", len(rows) - ok)])
    return EXIT_OK


def cmd_verify(cfg, writer):
    from .diagnostics import (
        convolution_checks,
        degenerate_checks,
        discretization_checks,
        ladder_checks,
        oracle_checks,
        refinement_ladder,
        run_checks,
    )
    from .solver import build_problem, solve_coupled

    prob = build_problem(cfg)
    records = discretization_checks(prob, seed=cfg.seed)
    sol = solve_coupled(prob)
    records += run_checks(sol)
    records += degenerate_checks(cfg)
    records += oracle_checks(cfg, seed=cfg.seed)
    records += convolution_checks()
    if len(cfg.refinement) >= 2:
        rows, _ = refinement_ladder(sorted(cfg.refinement), cfg.d, cfg.R, cfg.sphere_order,
                                    cfg.collision_rule, cfg.alpha)
        writer.csv("refinement.csv", REFINEMENT_COLUMNS,
                   [[n, r["h"], r["conservation"], r["equilibrium"], r["hprime"], r["stationary"]]
                    for n, r in rows])
        records += ladder_checks(cfg)
    lines = []
    for r in records:
        lines += ["", f"[check.{r.name}]", f"value = {fmt(r.value)}", f"threshold = {fmt(r.threshold)}",
                  f"passed = {fmt(r.passed)}", f"note = {_quote(r.note)}"]
    writer.text("verify_report.txt", lines)
    failed = [r.name for r in records if not r.passed]
    writer.manifest("ok" if not failed else "failed",
                    [("checks", len(records)), ("passed", len(records) - len(failed)),
                     ("failed", len(failed)), ("failed_checks", ", ".join(failed))])
    for r in records:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {fmt(r.value)} (threshold {fmt(r.threshold)})")
    return EXIT_OK if not failed else EXIT_INVALID


COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "functional": cmd_functional, "sweep": cmd_sweep}


def build_parser():
    p = argparse.ArgumentParser(prog="hjlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="scenario TOML file")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--threads", type=int, help="worker threads (fallback: HJLAB_THREADS)")
        s.add_argument("--seed", type=int, help="override scenario.seed")
    return p


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HJLAB_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("HJLAB_THREADS", f"expected an integer, got {env!r}") from None
    return 1


def main(argv=None):
    import warnings

    warnings.filterwarnings("ignore", module="numba")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
        threads = _threads(args)
        if threads < 1:
            raise ConfigError("--threads", f"must be >= 1, got {threads}")
    except ConfigError as exc:
        print(f"hjlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        threads = _set_threads(threads)
        writer = RunWriter(args.out or cfg.out_dir, args.command, cfg, threads)
        return COMMANDS[args.command](cfg, writer)
    except ConfigError as exc:
        print(f"hjlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Diverged as exc:
        print(f"hjlab: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except Exception:  # noqa: BLE001 - last-resort reporting
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
