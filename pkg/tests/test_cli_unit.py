from __future__ import annotations

import argparse
import json
from pathlib import Path

import pytest

import mmwave_tracksim.cli as cli

SMALL_TOML = """\
[scenario]
scenario = "UMi"
los_mode = "los"

[maps]
sf_map_extent = [20.0, 20.0]

[drop]
max_clusters = 2
max_subpaths = 3

[run]
rng_seed = 11
"""


def make_args(**kwargs):
    defaults = {"config": None, "out": None, "seed": None, "override": [], "quiet": True, "verbose": False}
    defaults.update(kwargs)
    return argparse.Namespace(**defaults)


def write_config(tmp_path: Path, text: str = SMALL_TOML) -> Path:
    path = tmp_path / "config.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_parse_args_defaults_to_simulate() -> None:
    mode, args = cli.parse_args(["--config", "a.toml", "--out", "out"])
    assert mode == "simulate"
    assert args.runs == 1
    assert args.maps is False
    assert args.override == []


def test_parse_args_accepts_explicit_simulate() -> None:
    mode, args = cli.parse_args(["simulate", "--config", "a.toml", "--out", "o", "--maps", "--runs", "3"])
    assert mode == "simulate"
    assert args.maps is True
    assert args.runs == 3


def test_parse_args_make_maps() -> None:
    mode, args = cli.parse_args(["make-maps", "--config", "a.toml", "--out", "o", "--seed", "4"])
    assert mode == "make-maps"
    assert args.seed == 4
    assert not hasattr(args, "runs")


def test_parse_args_requires_config() -> None:
    with pytest.raises(SystemExit):
        cli.parse_args(["--out", "o"])


def test_load_config_applies_seed_and_overrides(tmp_path: Path) -> None:
    path = write_config(tmp_path)
    args = make_args(config=str(path), seed=99, override=["ut_speed=2.0", "track='linear'"])
    config = cli.load_simulation_config(args)
    assert config.rng_seed == 99
    assert config.ut_speed == 2.0
    assert config.track == "linear"
    assert config.sf_map_extent == (20.0, 20.0)


def test_load_config_missing_file(tmp_path: Path) -> None:
    with pytest.raises(SystemExit, match="Config file not found"):
        cli.load_simulation_config(make_args(config=str(tmp_path / "none.toml")))


def test_load_config_reports_unknown_keys(tmp_path: Path) -> None:
    path = write_config(tmp_path, "[scenario]\nfrequency = 28e9\n")
    with pytest.raises(SystemExit, match="scenario.frequency"):
        cli.load_simulation_config(make_args(config=str(path)))


def test_load_config_rejects_bad_override(tmp_path: Path) -> None:
    path = write_config(tmp_path)
    with pytest.raises(SystemExit, match="key=value"):
        cli.load_simulation_config(make_args(config=str(path), override=["ut_speed"]))


def test_main_simulate_prints_json(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["--config", str(path), "--out", str(out), "--quiet"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["status"] == "ok"
    assert payload["seed"] == 11
    assert payload["steps"] == 80
    assert (out / "cir.csv").is_file()
    assert (out / "manifest.json").is_file()


def test_manifest_reproduces_a_run(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = write_config(tmp_path)
    cli.main(["--config", str(path), "--out", str(tmp_path / "a"), "--quiet"])
    manifest = tmp_path / "a" / "manifest.json"
    cli.main(["--config", str(manifest), "--out", str(tmp_path / "b"), "--quiet"])
    capsys.readouterr()
    for name in ("cir.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_main_invalid_config_exits(tmp_path: Path) -> None:
    path = write_config(tmp_path, SMALL_TOML.replace("rng_seed = 11", "rng_seed = -1"))
    with pytest.raises(SystemExit, match="rng_seed"):
        cli.main(["--config", str(path), "--out", str(tmp_path / "out"), "--quiet"])


def test_main_rejects_zero_runs(tmp_path: Path) -> None:
    path = write_config(tmp_path)
    with pytest.raises(SystemExit, match="--runs"):
        cli.main(["--config", str(path), "--out", str(tmp_path / "out"), "--runs", "0"])


def test_main_make_maps(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    path = write_config(tmp_path)
    out = tmp_path / "maps"
    assert cli.main(["make-maps", "--config", str(path), "--out", str(out), "--quiet"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert "sf_path_loss.csv" in payload["files"]
    assert (out / "sf_cluster_0_uncorrelated.csv").is_file()


def test_main_rejects_non_string_scenario(tmp_path: Path) -> None:
    path = write_config(tmp_path)
    with pytest.raises(SystemExit, match="scenario"):
        cli.main(["--config", str(path), "--out", str(tmp_path / "out"), "--override", "scenario=5", "--quiet"])
