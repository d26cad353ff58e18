import json
import os

import numpy as np
import pytest

from simpleray.exceptions import FormatError
from simpleray.formats import (
    RunDirectory,
    dumps_json,
    format_float,
    read_grid,
    read_record,
    read_sinogram,
    write_grid,
    write_record,
    write_sinogram,
)
from simpleray.geodesics import InflowGrid
from simpleray.wkb import DnRecord, ProbeConfig
from simpleray.xray import Sinogram


@pytest.fixture
def sinogram(small_inflow: InflowGrid) -> Sinogram:
    rng = np.random.default_rng(5)
    valid = np.ones(small_inflow.shape, dtype=bool)
    valid[0, 0] = False
    return Sinogram(
        grid=small_inflow,
        values=rng.normal(size=small_inflow.shape),
        tensor_order=1,
        metric_id="gauss1",
        valid=valid,
        weights=np.full(small_inflow.shape, small_inflow.d_alpha * small_inflow.d_beta),
    )


@pytest.fixture
def record() -> DnRecord:
    times = np.linspace(0.25, 0.75, 5)
    angles = np.array([6.1, 0.0, 0.2])
    return DnRecord(
        times=times,
        angles=angles,
        trace=np.exp(1j * np.add.outer(times, angles)),
        probe=ProbeConfig(kind="global", lam=16.0, z0=(0.0, 1.1), theta0=0.1),
        source_norm=2.5,
        provenance="wkb",
        center_time=0.5,
        center_angle=0.0,
        phase_reference=0.3,
        metric_id="conformal:1.3",
        column_phase=np.array([0.1, 0.2, 0.3]),
    )


@pytest.mark.parametrize("shape", [(4, 5), (4, 5, 2), (4, 5, 2, 2)], ids=["scalar", "covector", "tensor"])
def test_grid_file(tmp_path, shape) -> None:
    path = str(tmp_path / "field.grid")
    values = np.arange(np.prod(shape), dtype=float).reshape(shape)
    write_grid(path, values, (-1.15, 1.15, -1.0, 1.0))
    loaded, bbox = read_grid(path)
    assert np.array_equal(loaded, values)
    assert bbox == (-1.15, 1.15, -1.0, 1.0)


def test_grid_rank_is_checked(tmp_path) -> None:
    with pytest.raises(FormatError):
        write_grid(str(tmp_path / "bad.grid"), np.zeros((4, 4, 3)), (-1, 1, -1, 1))


def test_sinogram_file(tmp_path, sinogram: Sinogram) -> None:
    path = str(tmp_path / "b.sino")
    write_sinogram(path, sinogram)
    loaded = read_sinogram(path)
    assert loaded.grid == sinogram.grid
    assert loaded.metric_id == "gauss1"
    assert loaded.tensor_order == 1
    assert np.array_equal(loaded.values, sinogram.values)
    assert np.array_equal(loaded.valid, sinogram.valid)


def test_record_file(tmp_path, record: DnRecord) -> None:
    path = str(tmp_path / "probe.dnr")
    write_record(path, record)
    loaded = read_record(path)
    assert loaded.probe == record.probe
    assert np.array_equal(loaded.trace, record.trace)
    assert np.array_equal(loaded.column_phase, record.column_phase)
    assert loaded.metric_id == "conformal:1.3"
    assert loaded.source_norm == 2.5


def test_bad_magic(tmp_path, record: DnRecord) -> None:
    path = str(tmp_path / "probe.dnr")
    write_record(path, record)
    with pytest.raises(FormatError, match="bad magic"):
        read_grid(path)


def test_trailing_bytes(tmp_path) -> None:
    path = str(tmp_path / "field.grid")
    write_grid(path, np.zeros((3, 3)), (-1, 1, -1, 1))
    with open(path, "ab") as stream:
        stream.write(b"\x00" * 8)
    with pytest.raises(FormatError, match="trailing bytes"):
        read_grid(path)


def test_truncated_payload(tmp_path) -> None:
    path = str(tmp_path / "field.grid")
    write_grid(path, np.zeros((3, 3)), (-1, 1, -1, 1))
    with open(path, "rb") as stream:
        data = stream.read()
    with open(path, "wb") as stream:
        stream.write(data[:-8])
    with pytest.raises(FormatError, match="shorter"):
        read_grid(path)


def test_json_maps_nan_to_null() -> None:
    text = dumps_json({"delta": float("nan"), "values": np.array([1.0, np.inf]), "ok": np.bool_(True)})
    assert json.loads(text) == {"delta": None, "ok": True, "values": [1.0, None]}


def test_format_float() -> None:
    assert format_float(1 / 3) == "0.333333333333"
    assert format_float(2.0) == "2"


def test_run_directory_manifest(tmp_path) -> None:
    run = RunDirectory(str(tmp_path / "run"), "shoot", "0" * 64, seed=3)
    run.csv("table.csv", ("x", "y"), [(0.0, 1.0), (1.0, 2.0)])
    run.plot("table.csv", "x", ["y"])
    run.report({"value": 1.5})
    manifest = run.finish(0.25)
    assert [a["path"] for a in manifest["artifacts"]] == ["table.csv", "plot_table.py", "report.json"]
    assert manifest["seed"] == 3
    with open(os.path.join(str(tmp_path / "run"), "manifest.json")) as stream:
        written = json.load(stream)
    assert written["command"] == "shoot"
    assert written["wall_time"] == 0.25
    assert len(written["artifacts"][0]["sha256"]) == 64
