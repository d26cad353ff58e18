import contextlib
import logging
import os
import time
import typing
from dataclasses import replace

import click
import numpy as np

from simpleray.charts_gauge import GaugeElement, act, boundary_jet
from simpleray.config import LOG_LEVELS, Config
from simpleray.exceptions import SimplerayError
from simpleray.fields import MetricDifference
from simpleray.formats import RunDirectory, read_sinogram
from simpleray.geodesics import InflowGrid, distance_table, shoot, simplicity_check
from simpleray.recovery import (
    CASCADE_DELTAS,
    HolderSettings,
    cascade_experiment,
    collect_boundary_probes,
    distance_table_from_dn,
    extract_b_sinogram,
    extract_q_sinogram,
    holder_experiment,
    jet_errors,
    recover_boundary_jet,
    recover_metric_interior,
    run_pipeline,
)
from simpleray.registry import triple_from_ids
from simpleray.wavesolver import ProbeDictionary, dn_operator_gap, energy_check, fdtd_solve, gap_profile
from simpleray.wkb import synth_dn
from simpleray.xray import (
    PixelField,
    field_norm,
    invert_xray,
    pixel_grid,
    sample_pixels,
    solenoidal_project,
    unpack,
    xray,
)

logger = logging.getLogger("simpleray.error")

LEVEL_CHOICES = click.Choice(list(LOG_LEVELS.keys()))
ORDER_FIELDS = {0: "potential", 1: "covector", 2: "metric"}


def common_options(func: typing.Callable[..., typing.Any]) -> typing.Callable[..., typing.Any]:
    options = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(exists=True, dir_okay=False),
            default=None,
            help="Run configuration (TOML).",
        ),
        click.option(
            "--out",
            type=click.Path(file_okay=False),
            default=None,
            help="Output directory. [default: $SIMPLERAY_DATA_DIR/<command> or runs/<command>]",
        ),
        click.option("--threads", type=int, default=None, help="Worker thread cap."),
        click.option("--seed", type=int, default=None, help="Random seed."),
        click.option("--log-level", type=LEVEL_CHOICES, default=None, help="Log level. [default: info]"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


class Session:
    def __init__(self, command: str, config: Config, run: RunDirectory) -> None:
        self.command = command
        self.config = config
        self.run = run


@contextlib.contextmanager
def session(
    command: str,
    config_path: typing.Optional[str],
    out: typing.Optional[str],
    threads: typing.Optional[int],
    seed: typing.Optional[int],
    log_level: typing.Optional[str],
) -> typing.Iterator[Session]:
    start = time.perf_counter()
    try:
        kwargs = {"seed": seed, "threads": threads, "log_level": log_level}
        config = Config.from_file(config_path, **kwargs) if config_path else Config(**kwargs)
        config.configure_logging()
        config.load()
        root = out or os.path.join(config.out, command.replace(" ", "-"))
        run = RunDirectory(root, command, config.sha256, config.seed)
        yield Session(command, config, run)
    except SimplerayError as exc:
        logger.error("%s failed: %s", command, exc)
        raise click.ClickException(str(exc)) from None
    run.finish(time.perf_counter() - start)


def _triple(session: Session, name: str = "triple") -> typing.Any:
    return session.config.require_triple(name)


@click.group()
@click.version_option(package_name="simpleray")
def main() -> None:
    """Magnetic Schrödinger laboratory on simple surfaces."""


@main.command(name="shoot")
@click.option("--alpha", type=float, default=0.0, show_default=True, help="Boundary angle of the start point.")
@click.option("--beta", type=float, default=0.0, show_default=True, help="Inflow angle from the inward normal.")
@common_options
def shoot_command(alpha: float, beta: float, **common: typing.Any) -> None:
    """Trace one geodesic from the inflow boundary."""
    with session("shoot", **common) as s:
        t = _triple(s)
        grid = InflowGrid(radius=t.domain.boundary_radius)
        z = t.domain.boundary_point(np.array(alpha))
        v = grid.inflow_vectors(t.g, np.array([alpha]), np.array([beta]))[0]
        omega = t.g.eval(z) @ v
        geodesic = shoot(t.g, z, omega, t.domain)
        s.run.csv("geodesic.csv", ("t", "x", "y", "xi1", "xi2"), geodesic.rows())
        s.run.plot("geodesic.csv", "x", ["y"], title="geodesic")
        report = simplicity_check(t.g, t.domain)
        s.run.report(
            {
                "exit_point": list(geodesic.exit_point),
                "exit_time": geodesic.exit_time,
                "converged": geodesic.converged,
                "energy_drift": geodesic.energy_drift,
                "simple": report.is_simple,
                "boundary_convexity_min": report.boundary_convexity_min,
                "min_jacobi": report.min_jacobi,
            }
        )


@main.command()
@click.option("--pairs", type=int, default=16, show_default=True, help="Boundary samples per axis.")
@common_options
def distance(pairs: int, **common: typing.Any) -> None:
    """Boundary distance table ρ_g(α_x, α_y)."""
    with session("distance", **common) as s:
        t = _triple(s)
        angles = 2 * np.pi * np.arange(pairs) / pairs
        ax, ay = np.meshgrid(angles, angles, indexing="ij")
        off = ~np.eye(pairs, dtype=bool)
        result = distance_table(t.g, ax[off], ay[off], t.domain)
        rows = zip(ax[off], ay[off], result.lengths, result.residuals, result.converged.astype(int))
        s.run.csv("distances.csv", ("alpha_x", "alpha_y", "length", "residual", "converged"), rows)
        s.run.report(
            {
                "pairs": int(off.sum()),
                "failed": int((~result.converged).sum()),
                "max_residual": float(np.nanmax(result.residuals)),
            }
        )


@main.command(name="xray")
@click.option("--order", type=click.IntRange(0, 2), default=1, show_default=True, help="Tensor order to transform.")
@common_options
def xray_command(order: int, **common: typing.Any) -> None:
    """Geodesic X-ray transform of one coefficient of the triple."""
    with session("xray", **common) as s:
        t = _triple(s)
        if order == 2:
            reference = s.config.require_triple("reference")
            f = MetricDifference(t.g, reference.g)
            g = reference.g
        else:
            f = t.b if order == 1 else t.q
            g = t.g
        sinogram = xray(g, f, s.config.inflow, order=order)
        s.run.sinogram("sinogram.srsn", sinogram)
        a, b = np.meshgrid(sinogram.grid.alpha, sinogram.grid.beta, indexing="ij")
        rows = zip(a.ravel(), b.ravel(), sinogram.values.ravel(), sinogram.valid.ravel().astype(int))
        s.run.csv("sinogram.csv", ("alpha", "beta", "value", "valid"), rows)
        s.run.report({"order": order, "field": ORDER_FIELDS[order], "norm": sinogram.norm(), "valid": int(sinogram.valid.sum())})


@main.command()
@click.option("--sinogram", "sinogram_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Sinogram file (.srsn).")
@click.option("--maxiter", type=int, default=200, show_default=True, help="CG iteration cap.")
@common_options
def invert(sinogram_path: str, maxiter: int, **common: typing.Any) -> None:
    """Invert a sinogram on the pixel grid (solenoidal part for orders 1 and 2)."""
    with session("invert", **common) as s:
        t = _triple(s)
        sinogram = read_sinogram(sinogram_path)
        result = invert_xray(t.g, sinogram, grid=pixel_grid(s.config.pixels), maxiter=maxiter)
        field = result.field
        radius = field.grid.radius
        values = np.swapaxes(unpack(field.values, field.order), 0, 1)
        s.run.grid("field.grid", values, (-radius, radius, -radius, radius))
        s.run.csv("residuals.csv", ("iteration", "residual"), enumerate(result.residuals, start=1))
        s.run.plot("residuals.csv", "iteration", ["residual"], title="CGNE residual", logy=True)
        s.run.report(
            {
                "iterations": result.iterations,
                "converged": result.converged,
                "residual": result.residuals[-1] if result.residuals else float("nan"),
                "diagnostics": result.diagnostics,
            }
        )


def _parse_grid(value: typing.Optional[str]) -> typing.Optional[typing.Tuple[int, int]]:
    if value is None:
        return None
    try:
        n_r, n_theta = (int(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter("expected n_r,n_theta") from None
    return n_r, n_theta


@main.command()
@click.option("--triple", "triple_ids", type=str, default=None, help="metric|covector|potential registry ids.")
@click.option("--probe", "probe_kind", type=click.Choice(["local", "global"]), default=None, help="Probe kind.")
@click.option("--grid", "grid_size", type=str, default=None, help="Solver grid n_r,n_theta.")
@click.option("--T", "T", type=float, default=None, help="Time window.")
@common_options
def wavesolve(
    triple_ids: typing.Optional[str],
    probe_kind: typing.Optional[str],
    grid_size: typing.Optional[str],
    T: typing.Optional[float],
    **common: typing.Any,
) -> None:
    """Solve the magnetic wave equation for one probe and record its DN trace."""
    size = _parse_grid(grid_size)
    with session("wavesolve", **common) as s:
        if triple_ids:
            t = triple_from_ids(*triple_ids.split("|"), domain=s.config.domain)
        else:
            t = _triple(s)
        probe = s.config.probe if probe_kind is None else replace(s.config.probe, kind=probe_kind)
        grid = s.config.solver
        if size:
            grid = replace(grid, n_r=size[0], n_theta=size[1])
        if T is not None:
            grid = replace(grid, T=T)
        history, record = fdtd_solve(t, None, grid, probe=probe)
        energy = energy_check(history, t, record.source_norm, float(s.config.thresholds.get("energy_constant", 50.0)))
        s.run.record("trace.srdn", record)
        s.run.csv("energy.csv", ("time", "energy"), zip(history.times, energy.profile))
        s.run.plot("energy.csv", "time", ["energy"], title="H1 + L2 energy")
        s.run.report({"energy_ratio": energy.ratio, "violated": energy.violated, "steps": history.steps, "dt": history.dt})


@main.command(name="synth-dn")
@common_options
def synth_dn_command(**common: typing.Any) -> None:
    """Asymptotic DN record of the configured probe."""
    with session("synth-dn", **common) as s:
        t = _triple(s)
        record = synth_dn(t, s.config.probe)
        s.run.record("trace.srdn", record)
        s.run.report({"demodulated": [record.demodulated().real, record.demodulated().imag], "source_norm": record.source_norm})


@main.command(name="gauge-check")
@click.option("--gauges", type=int, default=3, show_default=True, help="Number of random gauges.")
@click.option("--amplitude", type=float, default=0.02, show_default=True, help="Gauge displacement amplitude.")
@common_options
def gauge_check(gauges: int, amplitude: float, **common: typing.Any) -> None:
    """DN gap between the triple and randomly gauged copies of it."""
    with session("gauge-check", **common) as s:
        t = _triple(s)
        dictionary = ProbeDictionary.build(s.config.dictionary)
        rows = []
        for k in range(gauges):
            gauge = GaugeElement.random(s.config.seed + k, amplitude, t.domain)
            gap = dn_operator_gap(t, act(gauge, t), dictionary, engine=s.config.engine, threads=s.config.threads)
            rows.append((s.config.seed + k, gap.delta))
        s.run.csv("gauge.csv", ("seed", "delta"), rows)
        s.run.report({"max_delta": max(d for _, d in rows) if rows else 0.0, "dictionary": dictionary.version})


@main.command()
@click.option("--windows", type=str, default="0.5,1.0,2.0", show_default=True, help="Window ends T_k, comma separated.")
@common_options
def gap(windows: str, **common: typing.Any) -> None:
    """DN gap between the triple and the reference triple on nested windows [0, T_k]."""
    try:
        ends = [float(v) for v in windows.split(",")]
    except ValueError:
        raise click.BadParameter("expected comma-separated window ends") from None
    with session("gap", **common) as s:
        t = _triple(s)
        reference = _triple(s, "reference")
        dictionary = ProbeDictionary.build(s.config.dictionary)
        profile = gap_profile(
            t, reference, dictionary, ends, engine=s.config.engine, grid=s.config.solver, threads=s.config.threads
        )
        s.run.csv("gap.csv", ("T", "delta"), zip(profile.windows, profile.deltas))
        s.run.plot("gap.csv", "T", ["delta"], title="DN gap by window")
        s.run.report({"windows": profile.windows, "deltas": profile.deltas, "monotone": profile.monotone, "dictionary": dictionary.version})


@main.group()
def recover() -> None:
    """Inverse pipeline stages."""


@recover.command(name="boundary-jet")
@click.option("--samples", type=int, default=64, show_default=True, help="Boundary samples.")
@click.option("--cascade", is_flag=True, default=False, help="Run the noise cascade instead.")
@common_options
def boundary_jet_command(samples: int, cascade: bool, **common: typing.Any) -> None:
    """Boundary jet from local probes."""
    with session("recover boundary-jet", **common) as s:
        t = _triple(s)
        if cascade:
            deltas = tuple(s.config.experiment.get("noise", CASCADE_DELTAS))
            report = cascade_experiment(t, deltas, n_alpha=samples, seed=s.config.seed, threads=s.config.threads)
            rows = zip(report.deltas, report.errors["stage0"], report.errors["stage1"], report.errors["stage2"])
            s.run.csv("cascade.csv", ("delta", "stage0", "stage1", "stage2"), rows)
            s.run.plot("cascade.csv", "delta", ["stage0", "stage1", "stage2"], title="boundary cascade", logx=True, logy=True)
            s.run.report({"slopes": report.slopes})
            return
        recovered = recover_boundary_jet(
            collect_boundary_probes(t, n_alpha=samples, engine=s.config.engine, grid=s.config.solver, threads=s.config.threads)
        )
        jet = recovered.jet
        columns = ("alpha", "h0", "h1", "h2", "b0", "b1", "q0", "curvature", "flagged")
        rows = zip(jet.alpha, jet.h0, jet.h1, jet.h2, jet.b0, jet.b1, jet.q0, jet.curvature, recovered.flagged.astype(int))
        s.run.csv("boundary_jet.csv", columns, rows)
        s.run.plot("boundary_jet.csv", "alpha", ["h0", "b0", "q0"], title="boundary jet")
        s.run.report(
            {
                "samples": samples,
                "flagged": int(recovered.flagged.sum()),
                "residuals": jet.residuals,
                "errors": jet_errors(jet, boundary_jet(t, samples)),
            }
        )


@recover.command(name="distance-table")
@click.option("--sources", type=int, default=16, show_default=True, help="Sources around the collar.")
@common_options
def distance_table_command(sources: int, **common: typing.Any) -> None:
    """Boundary distances from DN exit-patch localisation, checked against shooting."""
    with session("recover distance-table", **common) as s:
        t = _triple(s)
        table = distance_table_from_dn(t, n_sources=sources, threads=s.config.threads)
        direct = distance_table(t.g, table.alpha_x, table.alpha_y, t.domain).lengths
        rows = zip(table.alpha_x, table.alpha_y, table.lengths, direct)
        s.run.csv("distance_table.csv", ("alpha_x", "alpha_y", "dn_length", "shot_length"), rows)
        s.run.report({"pairs": len(direct), "max_difference": float(np.nanmax(np.abs(table.lengths - direct))) if len(direct) else 0.0})


@recover.command()
@click.option("--maxiter", type=int, default=200, show_default=True, help="CG iteration cap.")
@common_options
def interior(maxiter: int, **common: typing.Any) -> None:
    """Linearised metric difference from boundary distances against the reference metric."""
    with session("recover interior", **common) as s:
        t = _triple(s)
        reference = _triple(s, "reference")
        pixels = pixel_grid(s.config.pixels, radius=t.domain.boundary_radius)
        recovery = recover_metric_interior(t.g, reference.g, s.config.inflow, pixels, maxiter=maxiter)
        field = recovery.field
        truth = solenoidal_project(reference.g, sample_pixels(MetricDifference(t.g, reference.g), pixels, order=2)).solenoidal
        error = PixelField(pixels, field.values - truth.values, 2)
        radius = pixels.radius
        s.run.sinogram("interior.srsn", recovery.sinogram)
        s.run.grid("metric_difference.grid", np.swapaxes(unpack(field.values, 2), 0, 1), (-radius, radius, -radius, radius))
        s.run.report(
            {
                "norm": recovery.sinogram.norm(),
                "valid": int(recovery.sinogram.valid.sum()),
                "iterations": recovery.inversion.iterations,
                "converged": recovery.inversion.converged,
                "solenoidal_error": field_norm(reference.g, error),
                "solenoidal_norm": field_norm(reference.g, truth),
            }
        )


def _sinogram_command(name: str, extract: typing.Callable[..., typing.Any]) -> typing.Callable[..., None]:
    @recover.command(name=name)
    @click.option("--sources", type=int, default=48, show_default=True, help="Sources around the collar.")
    @common_options
    def command(sources: int, **common: typing.Any) -> None:
        with session("recover %s" % name, **common) as s:
            t = _triple(s)
            reference = _triple(s, "reference")
            extraction = extract(t, reference, s.config.inflow, n_sources=sources, threads=s.config.threads)
            sinogram = extraction.sinogram
            s.run.sinogram("%s.srsn" % name, sinogram)
            s.run.report(
                {
                    "order": sinogram.tensor_order,
                    "norm": sinogram.norm(),
                    "valid": int(sinogram.valid.sum()),
                    "flagged": int(extraction.flagged.sum()),
                    "skipped_sources": extraction.samples.skipped,
                    "imaginary_residual": extraction.imaginary_residual,
                }
            )

    command.__doc__ = "Sinogram of the %s difference from global probes." % ("covector" if name.startswith("b") else "potential")
    return command


_sinogram_command("b-sinogram", extract_b_sinogram)
_sinogram_command("q-sinogram", extract_q_sinogram)


def _settings(s: Session) -> HolderSettings:
    experiment = s.config.experiment
    defaults = HolderSettings()
    return HolderSettings(
        family=str(experiment.get("family", defaults.family)),
        epsilons=tuple(float(e) for e in experiment.get("epsilons", defaults.epsilons)),
        dictionary=s.config.dictionary,
        seed=s.config.seed,
        stages=tuple(experiment.get("stages", defaults.stages)),
        M=float(experiment.get("M", defaults.M)),
        mu=float(experiment.get("mu", defaults.mu)),
        threads=s.config.threads,
        n_sources=int(experiment.get("sources", defaults.n_sources)),
        sinogram_grid=int(experiment.get("sinogram_grid", defaults.sinogram_grid)),
        interior_grid=int(experiment.get("interior_grid", defaults.interior_grid)),
        pixels=s.config.pixels,
    )


@recover.command()
@common_options
def pipeline(**common: typing.Any) -> None:
    """Full recovery for the triple against the reference triple."""
    with session("recover pipeline", **common) as s:
        t = _triple(s)
        reference = _triple(s, "reference")
        settings = _settings(s)
        gap = dn_operator_gap(t, reference, ProbeDictionary.build(settings.dictionary), threads=settings.threads)
        report = run_pipeline(t, reference, gap.delta, settings)
        s.run.report({"delta": gap.delta, "errors": report.errors, "boundary": report.boundary, "sinograms": report.sinograms})


def _holder(s: Session) -> None:
    t = _triple(s)
    report = holder_experiment(t, _settings(s))
    rows = zip(report.epsilons, report.deltas, report.errors["g"], report.errors["b"], report.errors["q"])
    s.run.csv("holder.csv", ("epsilon", "delta", "g", "b", "q"), rows)
    s.run.plot("holder.csv", "delta", ["g", "b", "q"], title="%s family" % report.family, logx=True, logy=True)
    s.run.report(
        {
            "family": report.family,
            "epsilons": report.epsilons,
            "deltas": report.deltas,
            "errors": report.errors,
            "exponents": report.exponents,
            "bands": {k: list(v) for k, v in report.bands.items()},
            "failures": report.failures,
            "dictionary": report.dictionary,
            "config_hash": report.config_hash,
            "caveat": report.caveat,
            "gauges": report.gauges,
            "delta_monotone": report.delta_monotone,
            "exponent_cascade": report.exponent_cascade,
        }
    )


@recover.command(name="holder")
@common_options
def recover_holder(**common: typing.Any) -> None:
    """Hölder-exponent experiment over an ε family."""
    with session("recover holder", **common) as s:
        _holder(s)


@main.command(name="holder")
@common_options
def holder(**common: typing.Any) -> None:
    """Hölder-exponent experiment over an ε family."""
    with session("holder", **common) as s:
        _holder(s)

