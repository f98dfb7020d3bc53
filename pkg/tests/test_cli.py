"""Command-line behavior: verbs, config file, exit codes, report files."""

from __future__ import annotations

import pytest

from enlargemc.cli import _coerce, _read_config, main, UsageError
from enlargemc.scenarios import SCENARIOS, ScenarioConfig

# a configuration small enough for the suite but large enough that every
# verdict of the smooth-hazard scenario genuinely passes
FAST = ["--scenario", "cox-continuous", "--paths", "4000",
        "--steps", "150", "--seed", "7"]


def test_coerce_types():
    assert _coerce("3") == 3 and isinstance(_coerce("3"), int)
    assert _coerce("2.5") == 2.5 and isinstance(_coerce("2.5"), float)
    assert _coerce("1e-3") == 1e-3
    assert _coerce("hello") == "hello"


def test_list_names_every_scenario(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for key in SCENARIOS:
        assert key in out
    assert len(out.strip().splitlines()) == len(SCENARIOS)


def test_describe_shows_defaults(capsys):
    assert main(["describe", "--scenario", "hybrid-default"]) == 0
    out = capsys.readouterr().out
    assert "hybrid-default" in out
    assert "paths=16384" in out
    assert "barrier=-0.8" in out


def test_describe_unknown_scenario(capsys):
    assert main(["describe", "--scenario", "nope"]) == 2
    assert "unknown scenario" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys, tmp_path):
    assert main(["run", "--seed", "1"]) == 2                   # no scenario
    assert main(["run", "--scenario", "cox-continuous"]) == 2  # no seed
    assert main(["run", "--scenario", "nope", "--seed", "1"]) == 2
    assert main(["run", *FAST, "--param", "oops"]) == 2        # not key=value
    assert main(["run", *FAST, "--param", "banana=1"]) == 2    # unknown knob
    assert main(["run", *FAST[:-2], "--seed", "-4"]) == 2      # bad seed
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("mystery=1\n")
    assert main(["run", "--config", str(cfg)]) == 2            # unknown key
    assert main(["run", "--config", str(tmp_path / "absent.cfg")]) == 2
    capsys.readouterr()


def test_missing_verb_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "run" in capsys.readouterr().out


def test_run_passing_and_report(tmp_path, capsys):
    out_dir = tmp_path / "report"
    code = main([*["run"], *FAST, "--out", str(out_dir)])
    out = capsys.readouterr().out
    assert code == 0
    assert "verdict.overall=pass" in out
    assert "# wall_time_s=" in out
    assert (out_dir / "summary.txt").exists()
    csvs = sorted(p.name for p in out_dir.glob("*.csv"))
    assert csvs                                     # every table written
    # wall time never reaches the files
    assert "wall_time" not in (out_dir / "summary.txt").read_text()


def test_rerun_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([*["run"], *FAST, "--out", str(a)]) == 0
    assert main([*["run"], *FAST, "--out", str(b)]) == 0
    capsys.readouterr()
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_failing_verdict_exits_1(tmp_path, capsys):
    # an absurdly tight residual threshold forces the battery verdict to fail
    cfg = tmp_path / "tight.cfg"
    cfg.write_text("\n".join([
        "# deliberately unattainable residual bound",
        "scenario=cox-continuous",
        "paths=4000",
        "steps=150",
        "seed=7",
        "rho_threshold=1e-9",
    ]) + "\n")
    assert main(["run", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "verdict.overall=fail" in out


def test_flags_override_config(tmp_path, capsys):
    cfg = tmp_path / "base.cfg"
    cfg.write_text("scenario=cox-continuous\npaths=4000\nsteps=150\n"
                   "seed=7\nparam.lam=1.0\n")
    code = main(["run", "--config", str(cfg), "--param", "lam=0.5"])
    out = capsys.readouterr().out
    assert code in (0, 1)
    assert "config.param.lam=0.5" in out
    assert "config.seed=7" in out


def test_read_config_parsing(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\n\nscenario=cox-jumps\nseed=3\nparam.lam=0.25\n")
    entries = _read_config(str(cfg))
    assert entries == {"scenario": "cox-jumps", "seed": 3, "param.lam": 0.25}
    cfg.write_text("seed\n")
    with pytest.raises(UsageError, match="key=value"):
        _read_config(str(cfg))


def test_scenario_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="cox-continuous", seed=None)
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="cox-continuous", seed=1, n_paths=0)
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="cox-continuous", seed=1, alpha=2.0)
    with pytest.raises(ValueError):
        ScenarioConfig(scenario="cox-continuous", seed=1, rho_threshold=0.0)
    cfg = ScenarioConfig(scenario="cox-continuous", seed=1)
    assert cfg.alpha == 0.01 and cfg.rho_threshold == 0.05
