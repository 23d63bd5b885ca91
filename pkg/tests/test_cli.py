import json
import subprocess
import sys
from pathlib import Path

import pytest

from lightray import cli
from lightray.config import load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SMALL = {"experiment": "decompose", "seed": 0, "ranks": [1], "tf_ranks": [2],
         "grids": {"sizes": [32, 64]},
         "tolerances": {"residual": 1e-8, "order_ratio": 3.0, "pure_gauge": 0.01}}


def _write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return path


def _error_line(capsys):
    err = capsys.readouterr().err.strip()
    assert err.count("\n") == 0
    return err


def test_every_subcommand_has_a_default_config():
    assert len(cli.SUBCOMMANDS) == 8
    for sub in cli.SUBCOMMANDS:
        cfg = load_config(CONFIGS / f"{sub}.json", sub)
        assert cfg.hash() == load_config(CONFIGS / f"{sub}.json", sub).hash()


def test_success_exit_code_and_report(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert cli.main(["decompose", "--config", str(cfg), "--out", str(out)]) == 0
    assert "passed" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["schema"] == "report_v1"
    assert report["subcommand"] == "decompose" and report["passed"] is True
    assert report["config_hash"] == load_config(cfg, "decompose").hash()
    assert report["tolerances"]["residual"] is not None
    assert all(c["pass"] for c in report["criteria"])
    for art in report["artifacts"]:
        assert (out / art).exists()
    assert json.loads((out / "timing.json").read_text())["schema"] == "timing_v1"


def test_suite_failure_exits_one_with_report(tmp_path, capsys):
    bad = dict(SMALL, tolerances=dict(SMALL["tolerances"], order_ratio=1e9))
    out = tmp_path / "out"
    assert cli.main(["decompose", "--config", str(_write(tmp_path, bad)), "--out", str(out)]) == 1
    assert "FAILED" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is False
    assert any(not c["pass"] for c in report["criteria"])


def test_fixed_seed_gives_identical_reports(tmp_path):
    cfg = _write(tmp_path, SMALL)
    a = cli.run("decompose", cfg, tmp_path / "a")[1]
    b = cli.run("decompose", cfg, tmp_path / "b")[1]
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_seed_override_changes_report_hash(tmp_path):
    cfg = _write(tmp_path, SMALL)
    h0 = load_config(cfg, "decompose").hash()
    c7 = load_config(cfg, "decompose", seed=7)
    assert c7.seed == 7 and c7.hash() != h0


@pytest.mark.parametrize("text, field", [
    (json.dumps(dict(SMALL, colour="red")), "colour"),
    ("{not json", "config"),
    (json.dumps(dict(SMALL, experiment="transform")), "experiment"),
    (json.dumps(dict(SMALL, tolerances=dict(SMALL["tolerances"], residual=-1.0))), "residual"),
])
def test_config_errors_exit_two(tmp_path, capsys, text, field):
    code = cli.main(["decompose", "--config", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")])
    assert code == 2
    err = _error_line(capsys)
    assert err.startswith("lightray: config error: ") and field in err
    assert not (tmp_path / "o" / "report.json").exists()


def test_malformed_geometry_id_names_the_field(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "verify-gauge.json").read_text())
    cfg["geometries"] = ["rotation(zero)"]
    assert cli.main(["verify-gauge", "--config", str(_write(tmp_path, cfg))]) == 2
    assert "geometries" in _error_line(capsys)


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["decompose", "--config", str(tmp_path / "nope.json")]) == 2
    assert "cannot read" in _error_line(capsys)


def test_thread_cap(monkeypatch, capsys):
    assert cli.thread_cap({}) is None
    assert cli.thread_cap({"LIGHTRAY_THREADS": "2"}) == 2
    for bad in ("abc", "0", "-3"):
        with pytest.raises(cli.UsageError):
            cli.thread_cap({"LIGHTRAY_THREADS": bad})
    monkeypatch.setenv("LIGHTRAY_THREADS", "abc")
    assert cli.main(["decompose", "--config", str(CONFIGS / "decompose.json")]) == 2
    assert "LIGHTRAY_THREADS" in _error_line(capsys)


def test_usage_errors(capsys):
    assert cli.main([]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["decompose", "--seed", "-1"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        cli.main(["decompose", "--seed", str(2 ** 64)])
    with pytest.raises(SystemExit):
        cli.main(["bogus"])


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "lightray.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in cli.SUBCOMMANDS:
        assert sub in proc.stdout
