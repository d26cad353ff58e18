"""
Reference full-wave solver for (∂_t² + P)u = 0 on the unit disk with zero
initial data and Dirichlet data f on (0, T) × ∂Ω.

The operator is the Hermitian staggered form of `simpleray.manifold` written
in polar coordinates; time stepping is second-order leapfrog.
"""
import logging
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from simpleray.concurrency import parallel_map
from simpleray.exceptions import ProbeError, SimplerayError, SolverError
from simpleray.fields import Array
from simpleray.geodesics import wrap_angle
from simpleray.logging import TRACE_LOG_LEVEL
from simpleray.manifold import CoefficientTriple, assemble_magnetic_operator, staggered_from_metric
from simpleray.wkb import (
    DnRecord,
    GlobalSource,
    ProbeConfig,
    global_coefficients,
    solve_eikonal_global,
    source_trace,
    synth_dn,
)

logger = logging.getLogger("simpleray.error")

BoundarySource = typing.Callable[[Array, Array], Array]

DEFAULT_CFL = 0.5
LOCATIONS = (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)
DICTIONARY_LAMBDAS = (16.0, 32.0, 64.0)
DICTIONARY_OMEGAS = (0.0, 0.5)


@dataclass(frozen=True)
class SolverGrid:
    n_r: int = 128
    n_theta: int = 256
    T: float = 1.0
    cfl: float = DEFAULT_CFL
    dt: typing.Optional[float] = None
    record_every: int = 20
    radius: float = 1.0

    @property
    def dr(self) -> float:
        return self.radius / self.n_r

    @property
    def d_theta(self) -> float:
        return 2 * np.pi / self.n_theta

    @property
    def r(self) -> Array:
        return np.linspace(0.0, self.radius, self.n_r + 1)

    @property
    def theta(self) -> Array:
        return self.d_theta * np.arange(self.n_theta)

    def nodes(self) -> Array:
        r, theta = np.meshgrid(self.r, self.theta, indexing="ij")
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def max_speed(self, t: CoefficientTriple) -> float:
        inverse = t.g.inverse(self.nodes().reshape(-1, 2))
        return float(np.sqrt(np.linalg.eigvalsh(inverse)[:, -1].max()))

    def stable_dt(self, t: CoefficientTriple) -> float:
        return self.cfl * min(self.dr, self.dr * self.d_theta) / self.max_speed(t)

    def resolve_dt(self, t: CoefficientTriple) -> float:
        bound = self.stable_dt(t)
        if self.dt is None:
            return bound
        if self.dt > bound:
            msg = "Time step %.4g exceeds the CFL bound %.4g."
            raise SolverError(msg % (self.dt, bound))
        return self.dt


class PolarOperator:
    """P in polar coordinates on the nodes of a `SolverGrid`."""

    def __init__(self, t: CoefficientTriple, grid: SolverGrid) -> None:
        self.t = t
        self.grid = grid
        self.r_floor = 1e-3 * grid.dr
        nodes = grid.nodes()
        self.coefficients = staggered_from_metric(
            self.chart_metric,
            self.chart_covector,
            t.q.eval(nodes),
            grid.r,
            grid.theta,
            periodic=True,
        )
        self.matrix = assemble_magnetic_operator(self.coefficients)

    def _frame(self, u: Array) -> typing.Tuple[Array, Array]:
        r = np.maximum(u[..., 0], self.r_floor)
        theta = u[..., 1]
        c, s = np.cos(theta), np.sin(theta)
        x = np.stack([r * c, r * s], axis=-1)
        jac = np.stack([np.stack([c, -r * s], axis=-1), np.stack([s, r * c], axis=-1)], axis=-2)
        return x, jac

    def chart_metric(self, u: Array) -> Array:
        x, jac = self._frame(u)
        return np.einsum("...ki,...kl,...lj->...ij", jac, self.t.g.eval(x), jac)

    def chart_covector(self, u: Array) -> Array:
        x, jac = self._frame(u)
        return np.einsum("...ki,...k->...i", jac, self.t.b.eval(x))

    def boundary_data(self) -> typing.Tuple[Array, Array, Array]:
        """(G^{-1}, b_polar, h₀ = G_θθ) at the boundary ring."""
        u = np.stack([np.full(self.grid.n_theta, self.grid.radius), self.grid.theta], axis=-1)
        G = self.chart_metric(u)
        return np.linalg.inv(G), self.chart_covector(u), G[:, 1, 1]

    def node_data(self) -> typing.Tuple[Array, Array]:
        """(G^{-1}, √G) at the nodes, with the centre row carrying zero weight."""
        r, theta = np.meshgrid(self.grid.r, self.grid.theta, indexing="ij")
        G = self.chart_metric(np.stack([r, theta], axis=-1))
        density = self.coefficients.weight
        return np.linalg.inv(G), density


@dataclass
class WaveHistory:
    grid: SolverGrid
    dt: float
    times: Array
    u: Array
    ut: Array
    trace_times: Array
    trace: Array
    boundary_metric: Array = field(repr=False, default_factory=lambda: np.ones(0))

    @property
    def steps(self) -> int:
        return len(self.trace_times) - 1


def dn_trace(grid: SolverGrid, u: Array, inverse: Array, b_polar: Array) -> Array:
    """Normal magnetic derivative at r = R from the last three rings."""
    ring, inner, second = u[-1], u[-2], u[-3]
    du_r = (3 * ring - 4 * inner + second) / (2 * grid.dr)
    du_theta = (np.roll(ring, -1) - np.roll(ring, 1)) / (2 * grid.d_theta)
    radial = du_r - 1j * b_polar[:, 0] * ring
    angular = du_theta - 1j * b_polar[:, 1] * ring
    return (inverse[:, 0, 0] * radial + inverse[:, 0, 1] * angular) / np.sqrt(inverse[:, 0, 0])


def fdtd_solve(
    t: CoefficientTriple,
    source: typing.Optional[BoundarySource],
    grid: SolverGrid,
    probe: typing.Optional[ProbeConfig] = None,
) -> typing.Tuple[WaveHistory, DnRecord]:
    if source is None:
        if probe is None:
            msg = "Either a boundary source or a probe is required."
            raise ProbeError(msg)
        source = probe_source(t, probe)
    dt = grid.resolve_dt(t)
    steps = int(np.ceil(grid.T / dt - 1e-9))
    dt = grid.T / steps
    operator = PolarOperator(t, grid)
    inverse, b_polar, h0 = operator.boundary_data()
    shape = (grid.n_r + 1, grid.n_theta)
    trace_times = dt * np.arange(steps + 1)
    boundary = np.asarray(source(trace_times, grid.theta), dtype=complex)
    if not np.allclose(boundary[0], 0.0):
        msg = "Boundary source must vanish at t = 0."
        raise ProbeError(msg)
    logger.info("FDTD %dx%d grid, %d steps of dt=%.3e.", grid.n_r, grid.n_theta, steps, dt)

    previous = np.zeros(shape, dtype=complex)
    current = np.zeros(shape, dtype=complex)
    trace = np.zeros((steps + 1, grid.n_theta), dtype=complex)
    snapshots: typing.List[Array] = []
    velocities: typing.List[Array] = []
    snapshot_times: typing.List[float] = []
    matrix = operator.matrix
    for n in range(steps):
        nxt = 2 * current - previous - dt**2 * (matrix @ current.ravel()).reshape(shape)
        nxt[-1] = boundary[n + 1]
        nxt[0] = nxt[1].mean()
        if n % grid.record_every == 0:
            if not np.all(np.isfinite(nxt)):
                msg = "Non-finite wave field at step %d."
                raise SolverError(msg % (n + 1), step=n + 1)
            snapshots.append(current.copy())
            velocities.append((nxt - previous) / (2 * dt))
            snapshot_times.append(n * dt)
            if logger.isEnabledFor(TRACE_LOG_LEVEL):
                logger.log(TRACE_LOG_LEVEL, "step %d max|u| %.3e", n, float(np.abs(current).max()))
        trace[n] = dn_trace(grid, current, inverse, b_polar)
        previous, current = current, nxt
    if not np.all(np.isfinite(current)):
        msg = "Non-finite wave field at step %d."
        raise SolverError(msg % steps, step=steps)
    trace[steps] = dn_trace(grid, current, inverse, b_polar)

    history = WaveHistory(
        grid=grid,
        dt=dt,
        times=np.asarray(snapshot_times),
        u=np.asarray(snapshots),
        ut=np.asarray(velocities),
        trace_times=trace_times,
        trace=trace,
        boundary_metric=h0,
    )
    norm = boundary_source_norm(boundary, trace_times, grid.theta, h0)
    return history, _record_from_history(history, probe, norm, getattr(t.g, "identifier", "metric"))


def _record_from_history(history: WaveHistory, probe: typing.Optional[ProbeConfig], norm: float, metric_id: str) -> DnRecord:
    grid = history.grid
    probe = probe or ProbeConfig()
    if probe.kind == "local":
        center_time = probe.t0
        center_angle = float(np.mod(probe.x0, 2 * np.pi))
        column_phase: typing.Optional[Array] = probe.omega * wrap_angle(grid.theta - probe.x0)
    else:
        i, j = np.unravel_index(np.argmax(np.abs(history.trace)), history.trace.shape)
        center_time = float(history.trace_times[i])
        center_angle = float(grid.theta[j])
        column_phase = None
    return DnRecord(
        times=history.trace_times,
        angles=grid.theta,
        trace=history.trace,
        probe=probe,
        source_norm=norm,
        provenance="fdtd",
        center_time=center_time,
        center_angle=center_angle,
        phase_reference=0.0,
        metric_id=metric_id,
        column_phase=column_phase,
    )


def probe_source(t: CoefficientTriple, probe: ProbeConfig) -> BoundarySource:
    probe.check()
    if probe.kind == "local":
        return lambda times, angles: source_trace(probe, times, angles)
    chart = solve_eikonal_global(t.g, probe.z0, b=t.b, domain=t.domain)
    fan = GlobalSource(probe, global_coefficients(t, chart))
    return lambda times, angles: source_trace(probe, times, angles, source=fan)


def boundary_source_norm(values: Array, times: Array, angles: Array, h0: Array) -> float:
    """‖f‖_{H¹} on (0, T) × ∂Ω with the induced arclength √h₀ dθ."""
    if not np.any(values):
        return 0.0
    dt = times[1] - times[0]
    d_theta = angles[1] - angles[0]
    f_t = np.gradient(values, dt, axis=0)
    f_theta = (np.roll(values, -1, axis=1) - np.roll(values, 1, axis=1)) / (2 * d_theta)
    speed = np.sqrt(h0)[None, :]
    density = (np.abs(values) ** 2 + np.abs(f_t) ** 2 + np.abs(f_theta) ** 2 / speed**2) * speed
    return float(np.sqrt(np.sum(density) * dt * d_theta))


# Energy estimate


@dataclass
class EnergyReport:
    lhs: float
    rhs: float
    ratio: float
    c_T: float
    violated: bool
    profile: Array


def energy_check(history: WaveHistory, t: CoefficientTriple, source_norm: float, c_T: float = 50.0) -> EnergyReport:
    """
    max_t(‖u(t)‖_{H¹} + ‖u_t(t)‖_{L²}) against c_T‖f‖_{H¹} over the stored
    snapshots.
    """
    grid = history.grid
    inverse, density = PolarOperator(t, grid).node_data()
    weight = density * grid.dr * grid.d_theta
    profile = np.zeros(len(history.times))
    for k, (u, ut) in enumerate(zip(history.u, history.ut)):
        du_r = np.gradient(u, grid.dr, axis=0)
        du_theta = (np.roll(u, -1, axis=1) - np.roll(u, 1, axis=1)) / (2 * grid.d_theta)
        gradient = np.stack([du_r, du_theta], axis=-1)
        kinetic = np.einsum("...i,...ij,...j->...", gradient.conj(), inverse, gradient).real
        h1 = np.sqrt(np.sum((np.abs(u) ** 2 + kinetic) * weight))
        l2 = np.sqrt(np.sum(np.abs(ut) ** 2 * weight))
        profile[k] = h1 + l2
    lhs = float(profile.max()) if len(profile) else 0.0
    ratio = lhs / source_norm if source_norm > 0 else 0.0
    violated = ratio > c_T
    if violated:
        logger.warning("Energy ratio %.4g exceeds c_T = %.4g.", ratio, c_T)
    return EnergyReport(lhs=lhs, rhs=float(source_norm), ratio=ratio, c_T=c_T, violated=violated, profile=profile)


# Probe dictionaries


@dataclass(frozen=True)
class ProbeDictionary:
    version: str
    probes: typing.Tuple[ProbeConfig, ...]

    def __len__(self) -> int:
        return len(self.probes)

    @classmethod
    def build(cls, version: str, **kwargs: typing.Any) -> "ProbeDictionary":
        builders = {"fdtd-24": cls.fdtd24, "wkb-48": cls.wkb48}
        if version not in builders:
            msg = "Unknown probe dictionary %r (expected one of %s)."
            raise ProbeError(msg % (version, ", ".join(sorted(builders))))
        return builders[version](**kwargs)

    @classmethod
    def fdtd24(cls, t0: float = 0.5, eps: float = 0.25, window: float = 1.0) -> "ProbeDictionary":
        probes = tuple(
            ProbeConfig(kind="local", lam=lam, t0=t0, x0=x0, omega=omega, eps=eps, window=window, t_end=window)
            for x0 in LOCATIONS
            for lam in DICTIONARY_LAMBDAS
            for omega in DICTIONARY_OMEGAS
        )
        return cls("fdtd-24", probes)

    @classmethod
    def wkb48(
        cls, t0: float = 0.5, eps: float = 0.25, window: float = 1.0, source_radius: float = 1.1
    ) -> "ProbeDictionary":
        local = cls.fdtd24(t0, eps, window).probes
        angles = 2 * np.pi * np.arange(8) / 8 + np.pi / 8
        fan = tuple(
            ProbeConfig(
                kind="global",
                lam=lam,
                t0=t0,
                eps=eps,
                window=window,
                t_end=window,
                z0=(float(source_radius * np.cos(a)), float(source_radius * np.sin(a))),
            )
            for a in angles
            for lam in DICTIONARY_LAMBDAS
        )
        return cls("wkb-48", local + fan)


# DN gap


def resample(record: DnRecord, times: Array, angles: Array) -> Array:
    """Trace on another (time × angle) grid, interpolating the slow amplitude; zero outside."""
    if record.column_phase is None:
        msg = "Cannot resample a %s record without column phases."
        raise ProbeError(msg % record.provenance)
    center = record.center_angle
    own = center + wrap_angle(record.angles - center)
    order = np.argsort(own)
    own = own[order]
    amplitude = record.amplitude()[:, order]
    target = center + wrap_angle(np.asarray(angles) - center)
    mesh = np.stack(np.meshgrid(times, target, indexing="ij"), axis=-1)
    out = np.zeros(mesh.shape[:2], dtype=complex)
    for part, unit in ((amplitude.real, 1.0), (amplitude.imag, 1j)):
        interpolator = RegularGridInterpolator((record.times, own), part, bounds_error=False, fill_value=0.0)
        out = out + unit * interpolator(mesh)
    phase = np.interp(target, own, record.column_phase[order])
    return out * np.exp(1j * record.probe.lam * (np.asarray(times)[:, None] - phase[None, :]))


def record_gap(first: DnRecord, second: DnRecord, T: typing.Optional[float] = None) -> float:
    """‖Λf − Λ̃f‖ in L²((0, T) × ∂Ω, dt dα)."""
    same = (
        first.trace.shape == second.trace.shape
        and np.allclose(first.times, second.times)
        and np.allclose(wrap_angle(first.angles - second.angles), 0.0)
    )
    if same:
        times, angles = first.times, first.angles
        difference = first.trace - second.trace
    else:
        dt = min(np.min(np.diff(first.times)), np.min(np.diff(second.times)))
        start = min(first.times[0], second.times[0])
        stop = max(first.times[-1], second.times[-1])
        times = np.linspace(start, stop, int(np.ceil((stop - start) / dt)) + 1)
        center = first.center_angle
        spans = [center + wrap_angle(r.angles - center) for r in (first, second)]
        lo = min(s.min() for s in spans)
        hi = max(s.max() for s in spans)
        step = min(np.min(np.diff(np.sort(s))) for s in spans)
        angles = np.linspace(lo, hi, int(np.ceil((hi - lo) / step)) + 1)
        difference = resample(first, times, angles) - resample(second, times, angles)
    if T is not None:
        difference = np.where((times <= T + 1e-12)[:, None], difference, 0.0)
    dt = np.gradient(times) if len(times) > 1 else np.ones(1)
    widths = np.abs(np.gradient(np.unwrap(angles))) if len(angles) > 1 else np.ones(1)
    return float(np.sqrt(np.sum(np.abs(difference) ** 2 * dt[:, None] * widths[None, :])))


@dataclass
class GapResult:
    delta: float
    gaps: Array
    failures: int
    version: str
    engine: str
    T: typing.Optional[float]


def _record(t: CoefficientTriple, probe: ProbeConfig, engine: str, grid: typing.Optional[SolverGrid]) -> DnRecord:
    if engine == "wkb":
        return synth_dn(t, probe)
    if engine == "fdtd":
        _, record = fdtd_solve(t, None, grid or SolverGrid(T=probe.window), probe=probe)
        return record
    msg = "Unknown DN engine %r."
    raise ProbeError(msg % engine)


def _record_pairs(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    probes: typing.Sequence[ProbeConfig],
    engine: str,
    grid: typing.Optional[SolverGrid],
    threads: int,
) -> typing.List[typing.Optional[typing.Tuple[DnRecord, DnRecord]]]:
    def work(probe: ProbeConfig) -> typing.Optional[typing.Tuple[DnRecord, DnRecord]]:
        try:
            return _record(t, probe, engine, grid), _record(t_tilde, probe, engine, grid)
        except SimplerayError as exc:
            logger.warning("Probe %s failed: %s", probe.as_dict(), exc)
            return None

    return parallel_map(work, probes, threads)


def _gaps(pairs: typing.Sequence[typing.Optional[typing.Tuple[DnRecord, DnRecord]]], T: typing.Optional[float]) -> Array:
    gaps = np.full(len(pairs), np.nan)
    for k, pair in enumerate(pairs):
        if pair is None:
            continue
        first, second = pair
        norm = first.source_norm
        gaps[k] = record_gap(first, second, T) / norm if norm > 0 else 0.0
    return gaps


def dn_operator_gap(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    probes: typing.Union[ProbeDictionary, typing.Sequence[ProbeConfig]],
    T: typing.Optional[float] = None,
    engine: str = "wkb",
    grid: typing.Optional[SolverGrid] = None,
    threads: int = 1,
) -> GapResult:
    """δ = max over probes of ‖(Λ − Λ̃)f‖_{L²} / ‖f‖_{H¹}."""
    version = probes.version if isinstance(probes, ProbeDictionary) else "custom"
    items = probes.probes if isinstance(probes, ProbeDictionary) else tuple(probes)
    if engine == "fdtd" and T is not None:
        grid = grid or SolverGrid(T=T)
    pairs = _record_pairs(t, t_tilde, items, engine, grid, threads)
    gaps = _gaps(pairs, T)
    failures = int(np.isnan(gaps).sum())
    if failures:
        logger.warning("%d of %d probes failed; gap taken over the rest.", failures, len(items))
    delta = float(np.nanmax(gaps)) if failures < len(items) else float("nan")
    logger.info("DN gap %.4g over %d probes (%s, %s).", delta, len(items) - failures, version, engine)
    return GapResult(delta=delta, gaps=gaps, failures=failures, version=version, engine=engine, T=T)


@dataclass
class GapProfile:
    windows: Array
    deltas: Array
    monotone: bool


def gap_profile(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    probes: typing.Union[ProbeDictionary, typing.Sequence[ProbeConfig]],
    windows: typing.Sequence[float],
    engine: str = "wkb",
    grid: typing.Optional[SolverGrid] = None,
    threads: int = 1,
) -> GapProfile:
    """δ on nested windows [0, T_k], sharing one set of records."""
    items = probes.probes if isinstance(probes, ProbeDictionary) else tuple(probes)
    windows_ = np.sort(np.asarray(windows, dtype=float))
    if engine == "fdtd":
        grid = grid or SolverGrid(T=float(windows_[-1]))
    pairs = _record_pairs(t, t_tilde, items, engine, grid, threads)
    deltas = np.array([np.nanmax(_gaps(pairs, T)) for T in windows_])
    monotone = bool(np.all(np.diff(deltas) >= -1e-12))
    return GapProfile(windows=windows_, deltas=deltas, monotone=monotone)


# WKB validity


@dataclass
class ValidityReport:
    lams: Array
    gaps: Array
    slope: float


def wkb_validity(
    t: CoefficientTriple,
    probe: ProbeConfig,
    lams: typing.Sequence[float],
    grid: SolverGrid,
    n_alpha: int = 256,
    n_times: int = 129,
) -> ValidityReport:
    """‖Λf_fdtd − Λf_wkb‖ over a λ sweep of one probe and its log-log slope."""
    lams_ = np.asarray(lams, dtype=float)
    if len(lams_) < 2:
        msg = "A λ slope needs at least two frequencies, got %d."
        raise ProbeError(msg % len(lams_))
    gaps = np.zeros(len(lams_))
    for k, lam in enumerate(lams_):
        current = probe.with_lambda(lam)
        _, fdtd = fdtd_solve(t, None, grid, probe=current)
        wkb = synth_dn(t, current, n_alpha=n_alpha, n_times=n_times)
        gaps[k] = record_gap(fdtd, wkb)
    slope = float(np.polyfit(np.log(lams_), np.log(gaps), 1)[0])
    logger.info("WKB remainder slope %.3f over λ = %s.", slope, ", ".join("%g" % lam for lam in lams_))
    return ValidityReport(lams_, gaps, slope)
