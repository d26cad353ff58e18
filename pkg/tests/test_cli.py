import json
import os

import pytest
from click.testing import CliRunner

from simpleray.cli import main
from tests.constants import CONFORMAL_CONFIG, EUCLID_CONFIG, LENS_XRAY_CONFIG, SAME_PAIR_CONFIG
from tests.utils import write_config


def load(path: str) -> dict:
    with open(path, encoding="utf-8") as stream:
        return json.load(stream)


def test_version() -> None:
    result = CliRunner().invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "version" in result.output


def test_shoot(tmp_path) -> None:
    config = write_config(tmp_path, EUCLID_CONFIG)
    out = str(tmp_path / "shoot")
    result = CliRunner().invoke(main, ["shoot", "--config", config, "--out", out])
    assert result.exit_code == 0, result.output
    report = load(os.path.join(out, "report.json"))
    assert report["exit_time"] == pytest.approx(2.0, abs=1e-6)
    assert report["exit_point"] == pytest.approx([-1.0, 0.0], abs=1e-6)
    assert report["simple"] is True
    manifest = load(os.path.join(out, "manifest.json"))
    assert manifest["command"] == "shoot"
    assert manifest["seed"] == 3
    assert [a["path"] for a in manifest["artifacts"]] == ["geodesic.csv", "plot_geodesic.py", "report.json"]


def test_distance(tmp_path) -> None:
    config = write_config(tmp_path, EUCLID_CONFIG)
    out = str(tmp_path / "distance")
    result = CliRunner().invoke(main, ["distance", "--pairs", "4", "--config", config, "--out", out])
    assert result.exit_code == 0, result.output
    assert load(os.path.join(out, "report.json"))["pairs"] == 12


def test_missing_triple(tmp_path) -> None:
    config = write_config(tmp_path, "[run]\nseed = 1\n")
    result = CliRunner().invoke(main, ["shoot", "--config", config, "--out", str(tmp_path / "run")])
    assert result.exit_code == 1
    assert "Error: Missing [triple] table." in result.output
    assert not os.path.exists(str(tmp_path / "run" / "manifest.json"))


def test_bad_log_level(tmp_path) -> None:
    result = CliRunner().invoke(main, ["shoot", "--log-level", "loud"])
    assert result.exit_code == 2


def test_reruns_are_byte_identical(tmp_path) -> None:
    config = write_config(tmp_path, LENS_XRAY_CONFIG)
    runs = []
    for name in ("first", "second"):
        out = str(tmp_path / name)
        result = CliRunner().invoke(main, ["xray", "--order", "1", "--config", config, "--out", out])
        assert result.exit_code == 0, result.output
        runs.append(out)
    for artifact in ("report.json", "sinogram.csv", "sinogram.srsn"):
        with open(os.path.join(runs[0], artifact), "rb") as first, open(os.path.join(runs[1], artifact), "rb") as second:
            assert first.read() == second.read()
    manifests = [load(os.path.join(out, "manifest.json")) for out in runs]
    assert manifests[0]["artifacts"] == manifests[1]["artifacts"]
    assert manifests[0]["config_sha256"] == manifests[1]["config_sha256"]


def test_recover_interior(tmp_path) -> None:
    config = write_config(tmp_path, CONFORMAL_CONFIG)
    out = str(tmp_path / "interior")
    result = CliRunner().invoke(main, ["recover", "interior", "--maxiter", "50", "--config", config, "--out", out])
    assert result.exit_code == 0, result.output
    report = load(os.path.join(out, "report.json"))
    assert report["norm"] > 0
    assert report["valid"] > 0
    assert report["solenoidal_error"] < report["solenoidal_norm"]
    artifacts = [a["path"] for a in load(os.path.join(out, "manifest.json"))["artifacts"]]
    assert artifacts == ["interior.srsn", "metric_difference.grid", "report.json"]


def test_recover_interior_needs_a_reference(tmp_path) -> None:
    config = write_config(tmp_path, EUCLID_CONFIG)
    result = CliRunner().invoke(main, ["recover", "interior", "--config", config, "--out", str(tmp_path / "run")])
    assert result.exit_code == 1


def test_gap_of_the_same_pair(tmp_path) -> None:
    config = write_config(tmp_path, SAME_PAIR_CONFIG)
    out = str(tmp_path / "gap")
    result = CliRunner().invoke(main, ["gap", "--windows", "0.5,1.0", "--config", config, "--out", out])
    assert result.exit_code == 0, result.output
    report = load(os.path.join(out, "report.json"))
    assert report["windows"] == [0.5, 1.0]
    assert report["deltas"] == pytest.approx([0.0, 0.0], abs=1e-12)
    assert report["dictionary"] == "wkb-48"


def test_gap_rejects_malformed_windows(tmp_path) -> None:
    result = CliRunner().invoke(main, ["gap", "--windows", "0.5,soon"])
    assert result.exit_code == 2
    assert "comma-separated window ends" in result.output


def test_wavesolve_with_registry_ids(tmp_path) -> None:
    config = write_config(tmp_path, EUCLID_CONFIG)
    out = str(tmp_path / "wavesolve")
    args = ["wavesolve", "--triple", "euclid|swirl:0.2", "--grid", "16,64", "--T", "1.0", "--config", config, "--out", out]
    result = CliRunner().invoke(main, args)
    assert result.exit_code == 0, result.output
    report = load(os.path.join(out, "report.json"))
    assert report["steps"] > 0
    assert report["violated"] is False
