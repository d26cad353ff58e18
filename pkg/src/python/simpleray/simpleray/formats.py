"""
Artifact I/O.

Binary files are ``magic (4 bytes) + version (1 byte) + header + payload``, the
header a little-endian numpy structured record. Every write goes through a
temporary file in the target directory and ``os.replace``.
"""
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import typing

import numpy as np

from simpleray.exceptions import FormatError
from simpleray.fields import Array
from simpleray.geodesics import InflowGrid
from simpleray.wkb import DnRecord, ProbeConfig
from simpleray.xray import Sinogram

if typing.TYPE_CHECKING:
    from simpleray_types import ArtifactEntry, Manifest

logger = logging.getLogger("simpleray.run")

FORMAT_VERSION = 1
GRID_MAGIC = b"SRGD"
SINOGRAM_MAGIC = b"SRSN"
RECORD_MAGIC = b"SRDN"
FLOAT_FORMAT = ".12g"
PACKAGES = ("simpleray", "simpleray-types", "numpy", "scipy", "anyio", "click")

GRID_HEADER = np.dtype(
    [("ny", "<u4"), ("nx", "<u4"), ("rank", "u1"), ("bbox", "<f8", (4,))]
)
SINOGRAM_HEADER = np.dtype(
    [
        ("n_alpha", "<u4"),
        ("n_beta", "<u4"),
        ("order", "u1"),
        ("delta_beta", "<f8"),
        ("radius", "<f8"),
        ("metric_id", "S64"),
    ]
)
RECORD_HEADER = np.dtype(
    [
        ("n_times", "<u4"),
        ("n_angles", "<u4"),
        ("has_phase", "u1"),
        ("source_norm", "<f8"),
        ("center_time", "<f8"),
        ("center_angle", "<f8"),
        ("phase_reference", "<f8"),
        ("metric_id", "S64"),
        ("provenance", "S32"),
        ("probe_bytes", "<u4"),
    ]
)
RANK_SHAPES = {0: (), 1: (2,), 2: (2, 2)}


# Atomic writes


def atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temporary = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as stream:
            stream.write(data)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.unlink(temporary)
        raise


def sha256_file(path: str) -> str:
    with open(path, "rb") as stream:
        return hashlib.sha256(stream.read()).hexdigest()


# Binary containers


def _pack(magic: bytes, header: np.ndarray, *payload: bytes) -> bytes:
    return b"".join((magic, bytes([FORMAT_VERSION]), header.tobytes()) + payload)


def _unpack(path: str, magic: bytes, dtype: np.dtype) -> typing.Tuple[np.void, memoryview]:
    with open(path, "rb") as stream:
        data = stream.read()
    if data[:4] != magic:
        msg = "%s: bad magic %r (expected %r)."
        raise FormatError(msg % (path, data[:4], magic))
    if len(data) < 5 or data[4] != FORMAT_VERSION:
        msg = "%s: unsupported format version %r."
        raise FormatError(msg % (path, data[4:5]))
    end = 5 + dtype.itemsize
    if len(data) < end:
        msg = "%s: truncated header."
        raise FormatError(msg % path)
    header = np.frombuffer(data, dtype=dtype, count=1, offset=5)[0]
    return header, memoryview(data)[end:]


def _take(payload: memoryview, offset: int, dtype: str, shape: typing.Tuple[int, ...], path: str) -> typing.Tuple[Array, int]:
    count = int(np.prod(shape)) if shape else 1
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(payload):
        msg = "%s: payload shorter than its header declares."
        raise FormatError(msg % path)
    values = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape)
    return values.copy(), offset + size


def _check_consumed(payload: memoryview, offset: int, path: str) -> None:
    if offset != len(payload):
        msg = "%s: %d trailing bytes after the payload."
        raise FormatError(msg % (path, len(payload) - offset))


def write_grid(path: str, values: Array, bbox: typing.Sequence[float]) -> None:
    """Grid samples ``(ny, nx[, 2[, 2]])`` over ``bbox = (xmin, xmax, ymin, ymax)``."""
    values = np.asarray(values, dtype="<f8")
    rank = values.ndim - 2
    if rank not in RANK_SHAPES or values.shape[2:] != RANK_SHAPES[rank]:
        msg = "Grid values of shape %r are not a scalar, covector or 2-tensor stack."
        raise FormatError(msg % (values.shape,))
    header = np.zeros(1, dtype=GRID_HEADER)
    header["ny"], header["nx"] = values.shape[:2]
    header["rank"] = rank
    header["bbox"] = np.asarray(bbox, dtype=float)
    atomic_write(path, _pack(GRID_MAGIC, header, values.tobytes()))


def read_grid(path: str) -> typing.Tuple[Array, typing.Tuple[float, float, float, float]]:
    header, payload = _unpack(path, GRID_MAGIC, GRID_HEADER)
    rank = int(header["rank"])
    if rank not in RANK_SHAPES:
        msg = "%s: unknown tensor rank %d."
        raise FormatError(msg % (path, rank))
    shape = (int(header["ny"]), int(header["nx"])) + RANK_SHAPES[rank]
    values, offset = _take(payload, 0, "<f8", shape, path)
    _check_consumed(payload, offset, path)
    xmin, xmax, ymin, ymax = (float(v) for v in header["bbox"])
    return values, (xmin, xmax, ymin, ymax)


def write_sinogram(path: str, sinogram: Sinogram) -> None:
    grid = sinogram.grid
    header = np.zeros(1, dtype=SINOGRAM_HEADER)
    header["n_alpha"], header["n_beta"] = grid.shape
    header["order"] = sinogram.tensor_order
    header["delta_beta"] = grid.delta_beta
    header["radius"] = grid.radius
    header["metric_id"] = sinogram.metric_id.encode()[:64]
    atomic_write(
        path,
        _pack(
            SINOGRAM_MAGIC,
            header,
            np.asarray(sinogram.values, dtype="<f8").tobytes(),
            np.asarray(sinogram.valid, dtype="u1").tobytes(),
            np.asarray(sinogram.weights, dtype="<f8").tobytes(),
        ),
    )


def read_sinogram(path: str) -> Sinogram:
    header, payload = _unpack(path, SINOGRAM_MAGIC, SINOGRAM_HEADER)
    grid = InflowGrid(
        n_alpha=int(header["n_alpha"]),
        n_beta=int(header["n_beta"]),
        delta_beta=float(header["delta_beta"]),
        radius=float(header["radius"]),
    )
    values, offset = _take(payload, 0, "<f8", grid.shape, path)
    valid, offset = _take(payload, offset, "u1", grid.shape, path)
    weights, offset = _take(payload, offset, "<f8", grid.shape, path)
    _check_consumed(payload, offset, path)
    return Sinogram(
        grid=grid,
        values=values,
        tensor_order=int(header["order"]),
        metric_id=header["metric_id"].decode(),
        valid=valid.astype(bool),
        weights=weights,
    )


def write_record(path: str, record: DnRecord) -> None:
    probe = json.dumps(record.probe.as_dict(), sort_keys=True).encode()
    header = np.zeros(1, dtype=RECORD_HEADER)
    header["n_times"] = len(record.times)
    header["n_angles"] = len(record.angles)
    header["has_phase"] = record.column_phase is not None
    header["source_norm"] = record.source_norm
    header["center_time"] = record.center_time
    header["center_angle"] = record.center_angle
    header["phase_reference"] = record.phase_reference
    header["metric_id"] = record.metric_id.encode()[:64]
    header["provenance"] = record.provenance.encode()[:32]
    header["probe_bytes"] = len(probe)
    payload = [
        probe,
        np.asarray(record.times, dtype="<f8").tobytes(),
        np.asarray(record.angles, dtype="<f8").tobytes(),
        np.asarray(record.trace, dtype="<c16").tobytes(),
    ]
    if record.column_phase is not None:
        payload.append(np.asarray(record.column_phase, dtype="<f8").tobytes())
    atomic_write(path, _pack(RECORD_MAGIC, header, *payload))


def read_record(path: str) -> DnRecord:
    header, payload = _unpack(path, RECORD_MAGIC, RECORD_HEADER)
    size = int(header["probe_bytes"])
    if size > len(payload):
        msg = "%s: probe description longer than the payload."
        raise FormatError(msg % path)
    try:
        fields = json.loads(bytes(payload[:size]).decode())
        fields["z0"] = tuple(fields["z0"])
        probe = ProbeConfig(**fields)
    except (ValueError, KeyError, TypeError) as exc:
        msg = "%s: unreadable probe description (%s)."
        raise FormatError(msg % (path, exc)) from None
    n_times, n_angles = int(header["n_times"]), int(header["n_angles"])
    times, offset = _take(payload, size, "<f8", (n_times,), path)
    angles, offset = _take(payload, offset, "<f8", (n_angles,), path)
    trace, offset = _take(payload, offset, "<c16", (n_times, n_angles), path)
    column_phase = None
    if header["has_phase"]:
        column_phase, offset = _take(payload, offset, "<f8", (n_angles,), path)
    _check_consumed(payload, offset, path)
    return DnRecord(
        times=times,
        angles=angles,
        trace=trace,
        probe=probe,
        source_norm=float(header["source_norm"]),
        provenance=header["provenance"].decode(),
        center_time=float(header["center_time"]),
        center_angle=float(header["center_angle"]),
        phase_reference=float(header["phase_reference"]),
        metric_id=header["metric_id"].decode(),
        column_phase=column_phase,
    )


# Text artifacts


def format_float(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


def _cell(value: typing.Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return "%s%+sj" % (format_float(value.real), format_float(value.imag))
    return str(value)


def write_csv(path: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    atomic_write(path, buffer.getvalue().encode())


def _plain(value: typing.Any) -> typing.Any:
    """JSON-ready copy with floats rounded to the fixed format and NaN mapped to null."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return float(format_float(value)) if math.isfinite(value) else None
    return value


def dumps_json(document: typing.Any) -> str:
    return json.dumps(_plain(document), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str, document: typing.Any) -> None:
    atomic_write(path, dumps_json(document).encode())


PLOT_TEMPLATE = '''"""Plot {csv} (generated by simpleray)."""
import csv

import matplotlib.pyplot as plt

with open("{csv}") as stream:
    rows = list(csv.DictReader(stream))

x = [float(row["{x}"]) for row in rows]
fig, ax = plt.subplots()
for name in {ys!r}:
    ax.plot(x, [float(row[name]) for row in rows], marker="o", label=name)
ax.set_xscale("{xscale}")
ax.set_yscale("{yscale}")
ax.set_xlabel("{x}")
ax.set_title("{title}")
ax.legend()
fig.savefig("{stem}.png", dpi=150)
'''


def write_plot_script(
    path: str,
    csv_name: str,
    x: str,
    ys: typing.Sequence[str],
    title: str = "",
    logx: bool = False,
    logy: bool = False,
) -> None:
    """A standalone matplotlib script reading ``csv_name``; matplotlib is not needed here."""
    text = PLOT_TEMPLATE.format(
        csv=csv_name,
        x=x,
        ys=list(ys),
        xscale="log" if logx else "linear",
        yscale="log" if logy else "linear",
        title=title,
        stem=os.path.splitext(csv_name)[0],
    )
    atomic_write(path, text.encode())


# Run directories


def package_versions() -> typing.Dict[str, str]:
    from importlib import metadata

    versions = {}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunDirectory:
    """Collects the artifacts of one command and writes ``manifest.json`` last."""

    def __init__(self, root: str, command: str, config_sha256: str, seed: int) -> None:
        self.root = root
        self.command = command
        self.config_sha256 = config_sha256
        self.seed = seed
        self.artifacts: typing.List["ArtifactEntry"] = []
        os.makedirs(root, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def _added(self, name: str, kind: str) -> str:
        path = self.path(name)
        digest = sha256_file(path)
        self.artifacts.append({"path": name, "kind": kind, "sha256": digest})
        logger.info("Wrote %s (%s, sha256 %s).", path, kind, digest[:12], extra={"artifact": name})
        return path

    def grid(self, name: str, values: Array, bbox: typing.Sequence[float]) -> str:
        write_grid(self.path(name), values, bbox)
        return self._added(name, "grid")

    def sinogram(self, name: str, sinogram: Sinogram) -> str:
        write_sinogram(self.path(name), sinogram)
        return self._added(name, "sinogram")

    def record(self, name: str, record: DnRecord) -> str:
        write_record(self.path(name), record)
        return self._added(name, "dn-record")

    def csv(self, name: str, header: typing.Sequence[str], rows: typing.Iterable[typing.Sequence[typing.Any]]) -> str:
        write_csv(self.path(name), header, rows)
        return self._added(name, "csv")

    def plot(self, csv_name: str, x: str, ys: typing.Sequence[str], **kwargs: typing.Any) -> str:
        name = "plot_%s.py" % os.path.splitext(csv_name)[0]
        write_plot_script(self.path(name), csv_name, x, ys, **kwargs)
        return self._added(name, "plot-script")

    def report(self, document: typing.Any) -> str:
        write_json(self.path("report.json"), document)
        return self._added("report.json", "report")

    def finish(self, wall_time: float) -> "Manifest":
        manifest: "Manifest" = {
            "command": self.command,
            "config_sha256": self.config_sha256,
            "seed": self.seed,
            "versions": package_versions(),
            "wall_time": wall_time,
            "artifacts": self.artifacts,
        }
        write_json(self.path("manifest.json"), manifest)
        logger.info("Run %s finished in %.2fs with %d artifacts.", self.command, wall_time, len(self.artifacts))
        return manifest
