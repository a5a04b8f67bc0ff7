import csv
from pathlib import Path
import pytest

from hjlab.cli import EXIT_DIVERGED, EXIT_INVALID, EXIT_OK, fmt, main, run_identifier
from hjlab.config import load_config, tomllib

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TINY = CONFIGS / "tiny.toml"


def _write(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(TINY.read_text() + text)
    return str(path)


def _snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir())}


@pytest.mark.parametrize("command", ["solve", "functional", "sweep"])
def test_commands_are_deterministic(tmp_path, command):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([command, "--config", str(TINY), "--out", str(a)]) == EXIT_OK
    assert main([command, "--config", str(TINY), "--out", str(b)]) == EXIT_OK
    assert _snapshot(a) == _snapshot(b)
    man = tomllib.loads((a / "manifest.txt").read_text())
    assert man["status"] == "ok" and man["command"] == command
    assert set(man["files"]) == set(_snapshot(a)) - {"manifest.txt"}
    for name, data in _snapshot(a).items():
        if name.endswith(".csv"):
            assert data.startswith(f"# run_id = {man['run_id']}\n".encode())


def test_solve_outputs(tmp_path):
    assert main(["solve", "--config", str(TINY), "--out", str(tmp_path)]) == EXIT_OK
    assert {"trajectory.csv", "history.csv", "decay.png", "history.png", "manifest.txt"} <= set(_snapshot(tmp_path))
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[1].startswith("s,sup_psi_p")


def test_zero_perturbation_gives_zero_trajectory(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(TINY.read_text().replace("[scenario]\n", "[scenario]\nperturbation_scale = 0.0\n"))
    cfg = str(cfg)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()[2:]
    assert rows and all(float(x) == 0.0 for r in rows for x in r.split(",")[1:])


def test_invalid_config_names_key(tmp_path, capsys):
    cfg = _write(tmp_path, "\n[norms]\nsigma = -1.0\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert "sigma" in capsys.readouterr().err
    cfg = _write(tmp_path, "\n[norms]\nbogus = 1\n")
    assert main(["solve", "--config", cfg]) == EXIT_INVALID
    assert "norms.bogus" in capsys.readouterr().err


def test_bad_thread_count(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("HJLAB_THREADS", "many")
    assert main(["solve", "--config", str(TINY), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "HJLAB_THREADS" in capsys.readouterr().err
    assert main(["solve", "--config", str(TINY), "--out", str(tmp_path), "--threads", "0"]) == EXIT_INVALID


def test_divergence_exit_code(tmp_path):
    text = TINY.read_text().replace("[solver]\n", "[solver]\ntolerance = 1e-30\nmax_iterations = 1\n")
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(text)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DIVERGED
    man = tomllib.loads((tmp_path / "o" / "manifest.txt").read_text())
    assert man["status"] == "diverged"


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    assert main(["sweep", "--config", str(TINY), "--out", str(tmp_path / "a"), "--threads", "1"]) == EXIT_OK
    monkeypatch.setenv("HJLAB_THREADS", "2")
    assert main(["sweep", "--config", str(TINY), "--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "sweep.csv").read_bytes()
    assert a == (tmp_path / "b" / "sweep.csv").read_bytes()


def test_sweep_records_failed_points(tmp_path):
    cfg = _write(tmp_path, "\n[sweep]\nalpha = [0.2, 0.7]\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_OK
    rows = list(csv.reader((tmp_path / "o" / "sweep.csv").read_text().splitlines()[2:]))
    status = [r[5] for r in rows]
    assert status[0] == "ok" and status[1].startswith("invalid")


def test_verify_tiny(tmp_path, capsys):
    assert main(["verify", "--config", str(TINY), "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 10
    report = tomllib.loads((tmp_path / "verify_report.txt").read_text())
    assert all(c["passed"] for c in report["check"].values())


def test_run_identifier_depends_on_command_and_config():
    cfg = load_config(str(TINY))
    assert run_identifier("solve", cfg) == run_identifier("solve", cfg)
    assert run_identifier("solve", cfg) != run_identifier("sweep", cfg)
    assert run_identifier("solve", cfg) != run_identifier("solve", cfg.with_(seed=1))


def test_fmt_roundtrips():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17):
        assert float(fmt(x)) == x
    assert fmt(True) in ("true", "True", "1")
