"""
The inverse pipeline: boundary jets from DN asymptotics, near-boundary
modification, sinogram extraction for the covector and potential, the
linearised interior metric and Hölder-exponent experiments.
"""
import hashlib
import json
import logging
import typing
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import LinearNDInterpolator

from simpleray.charts_gauge import (
    STANDARD_GRID,
    BoundaryJet,
    BoundaryLayer,
    GaugeElement,
    act,
    alignment_gauge,
    boundary_jet,
    standard_points,
)
from simpleray.concurrency import parallel_map
from simpleray.exceptions import DomainError, ProbeError, SimplerayError
from simpleray.fields import (
    Array,
    BumpTensor,
    CompactBump,
    ConstantScalar,
    CovectorSum,
    GridCovectorField,
    GridMetric,
    GridScalarField,
    MetricPlusTensor,
    RotatedGradient,
    ScalarSum,
    cutoff,
)
from simpleray.geodesics import InflowGrid, RayIntegrator, default_step, distance_table
from simpleray.manifold import CoefficientTriple, Domain
from simpleray.wavesolver import ProbeDictionary, SolverGrid, dn_operator_gap, fdtd_solve
from simpleray.wkb import (
    LAMBDA_SWEEP,
    DnRecord,
    ProbeConfig,
    global_coefficients,
    global_record,
    moment_directions,
    solve_eikonal_global,
    synth_dn,
    trace_coefficients,
)
from simpleray.xray import (
    InversionResult,
    PixelField,
    RayTable,
    Sinogram,
    invert_xray,
    pixel_grid,
    sample_pixels,
    solenoidal_project,
)

logger = logging.getLogger("simpleray.error")

CONDITION_LIMIT = 1e6
DEFAULT_M = 5
MU_TARGET = 0.9
C_KAPPA = 1.0
C_ONE = 8.0
CASCADE_DELTAS = (1e-2, 1e-3, 1e-4, 1e-5)
GLOBAL_LAMBDAS = (32.0, 64.0, 128.0)
SOURCE_RADIUS = 1.0 + 0.1 * C_KAPPA
INTERPOLATION_LIMIT = 10.0
FAMILIES = ("mixed", "metric", "covector", "potential", "gauge")
PIPELINE_STAGES = ("boundary", "modify", "b", "q", "interior")


# λ-coefficient fits


def fit_lambda_coefficients(values: Array, lams: typing.Sequence[float], terms: int = 3) -> typing.Tuple[Array, ...]:
    """
    Weighted least squares (weights 1/λ) of demodulated traces ``values[..., l]``
    against c₁λ + c₀ + c₋₁λ^{-1}, or c₁λ + c₀ when ``terms == 2``.
    """
    lams = np.asarray(lams, dtype=float)
    if len(lams) < terms:
        msg = "A %d-term frequency fit needs at least %d frequencies, got %d."
        raise ProbeError(msg % (terms, terms, len(lams)))
    columns = [lams, np.ones_like(lams), 1.0 / lams][:terms]
    design = np.stack(columns, axis=-1) / np.sqrt(lams)[:, None]
    values = np.asarray(values)
    flat = values.reshape(-1, len(lams)).T / np.sqrt(lams)[:, None]
    solution, *_ = np.linalg.lstsq(design.astype(complex), flat.astype(complex), rcond=None)
    shape = values.shape[:-1]
    return tuple(row.reshape(shape) for row in solution)


def balanced_lambdas(delta: float, stages: int = 3) -> Array:
    """λ_m = δ^{-1/2^m}."""
    return np.array([delta ** (-1.0 / 2**m) for m in range(stages)])


def fit_balanced(values: Array, lams: typing.Sequence[float]) -> typing.Tuple[Array, Array, Array]:
    """Sequential single-frequency estimates at the balanced frequencies (λ₀ > λ₁ > λ₂)."""
    l0, l1, l2 = lams
    v0, v1, v2 = values[..., 0], values[..., 1], values[..., 2]
    c1 = v0 / l0
    c0 = v1 - l1 * c1
    cm1 = l2 * (v2 - l2 * c1 - c0)
    return c1, c0, cm1


def inject_noise(record: DnRecord, delta: float, rng: np.random.Generator) -> DnRecord:
    """Complex Gaussian noise with ‖noise‖_{L²} = δ‖f‖_{H¹} over the record grid."""
    noise = rng.normal(size=record.trace.shape) + 1j * rng.normal(size=record.trace.shape)
    size = replace(record, trace=noise).l2_norm()
    noise *= delta * record.source_norm / size if size > 0 else 0.0
    return replace(record, trace=record.trace + noise, provenance=record.provenance + "+noise")


# Boundary probe sets


@dataclass
class BoundaryProbeSet:
    """Demodulated centre values ``values[k, d, l]`` at angle k, direction d and frequency l."""

    alpha: Array
    omegas: Array
    lams: Array
    values: Array
    noise: typing.Optional[float] = None
    engine: str = "wkb"

    @property
    def balanced(self) -> bool:
        return self.noise is not None

    def coefficients(self) -> typing.Tuple[Array, Array, Array]:
        if self.balanced:
            return fit_balanced(self.values, self.lams)
        return fit_lambda_coefficients(self.values, self.lams)


def collect_boundary_probes(
    t: CoefficientTriple,
    n_alpha: int = 64,
    lams: typing.Sequence[float] = LAMBDA_SWEEP,
    omegas: typing.Optional[Array] = None,
    noise: typing.Optional[float] = None,
    seed: int = 0,
    eps: float = 0.25,
    t0: float = 0.5,
    engine: str = "wkb",
    grid: typing.Optional[SolverGrid] = None,
    threads: int = 1,
) -> BoundaryProbeSet:
    """
    Local probes at every boundary sample for each direction and frequency.
    With ``noise`` set, frequencies are the balanced λ_m = δ^{-1/2^m} and each
    record gets noise of relative size δ.
    """
    omegas = moment_directions() if omegas is None else np.asarray(omegas, dtype=float)
    lams_ = balanced_lambdas(noise) if noise is not None else np.asarray(lams, dtype=float)
    alpha = 2 * np.pi * np.arange(n_alpha) / n_alpha
    jet = boundary_jet(t, n_alpha) if engine == "wkb" else None
    if engine == "fdtd":
        grid = grid or SolverGrid()
        if grid.n_theta % n_alpha:
            msg = "Solver angles (%d) must refine the boundary samples (%d)."
            raise ProbeError(msg % (grid.n_theta, n_alpha))
    seeds = np.random.SeedSequence(seed).spawn(n_alpha)

    def location(k: int) -> Array:
        rng = np.random.default_rng(seeds[k])
        out = np.zeros((len(omegas), len(lams_)), dtype=complex)
        for d, omega in enumerate(omegas):
            for l, lam in enumerate(lams_):
                probe = ProbeConfig(kind="local", lam=float(lam), t0=t0, x0=float(alpha[k]), omega=float(omega), eps=eps)
                if engine == "wkb":
                    record = synth_dn(t, probe, n_alpha=n_alpha, jet=jet)
                else:
                    _, record = fdtd_solve(t, None, grid, probe=probe)
                if noise is not None:
                    record = inject_noise(record, noise, rng)
                out[d, l] = record.demodulated()
        return out

    values = np.stack(parallel_map(location, range(n_alpha), threads))
    logger.info("Collected %d boundary probes (%s engine).", values.size, engine)
    return BoundaryProbeSet(alpha, omegas, lams_, values, noise, engine)


# Boundary recovery


@dataclass
class StageResult:
    values: typing.Dict[str, Array]
    condition: Array
    flagged: Array
    residual: float


def _base_jet(alpha: Array, **known: Array) -> BoundaryJet:
    zeros = np.zeros(len(alpha))
    fields = {"h0": np.ones(len(alpha)), "h1": zeros, "h2": zeros, "b0": zeros, "b1": zeros, "q0": zeros}
    fields.update(known)
    return BoundaryJet(alpha=alpha, curvature=zeros, **fields)


def _affine_solve(
    jet: BoundaryJet,
    omegas: Array,
    data: Array,
    unknowns: typing.Sequence[str],
    index: int,
) -> StageResult:
    """
    Solve the per-sample moment system data[k, d] = F_d(jet)[k], with F affine
    in the named jet entries, by least squares over the real and imaginary parts.
    """
    n = jet.size
    base = np.stack([trace_coefficients(jet, w)[index] for w in omegas], axis=-1)
    columns = []
    for name in unknowns:
        probe = jet.replace(**{name: getattr(jet, name) + 1.0})
        shifted = np.stack([trace_coefficients(probe, w)[index] for w in omegas], axis=-1)
        columns.append(shifted - base)
    A = np.stack(columns, axis=-1)
    A_real = np.concatenate([A.real, A.imag], axis=1)
    rhs = data - base
    rhs_real = np.concatenate([rhs.real, rhs.imag], axis=1)
    solution = np.einsum("kij,kj->ki", np.linalg.pinv(A_real), rhs_real)
    condition = np.linalg.cond(A_real)
    flagged = ~np.isfinite(condition) | (condition > CONDITION_LIMIT)
    if flagged.any():
        logger.warning("%d of %d boundary samples have condition numbers above %.0e.", int(flagged.sum()), n, CONDITION_LIMIT)
    fitted = np.einsum("kij,kj->ki", A_real, solution)
    residual = float(np.abs(fitted - rhs_real).max())
    return StageResult({name: solution[:, i] for i, name in enumerate(unknowns)}, condition, flagged, residual)


def recover_boundary_metric(probes: BoundaryProbeSet) -> StageResult:
    """h₀ from the λ¹ coefficients: ω_n = Re(−iĉ₁) and ω_n² = 1 − ω′²/h₀."""
    c1, _, _ = probes.coefficients()
    m = np.real(-1j * c1)
    w2 = probes.omegas**2
    denominator = np.sum(w2**2)
    if denominator == 0:
        msg = "Tangential metric is unobservable with purely normal probes."
        raise ProbeError(msg)
    a0 = np.sum(w2[None, :] * (1.0 - m**2), axis=1) / denominator
    h0 = 1.0 / a0
    residual = float(np.abs(1.0 - a0[:, None] * w2[None, :] - m**2).max())
    condition = np.full(len(a0), np.linalg.cond(w2[:, None]))
    flagged = ~np.isfinite(h0) | (h0 <= 0)
    return StageResult({"h0": h0, "omega_n": m}, condition, flagged, residual)


def recover_boundary_jet1(probes: BoundaryProbeSet, stage0: StageResult) -> StageResult:
    """(∂ₙh, tangential b) from the λ⁰ coefficients."""
    _, c0, _ = probes.coefficients()
    jet = _base_jet(probes.alpha, h0=stage0.values["h0"])
    return _affine_solve(jet, probes.omegas, c0, ("h1", "b0"), 1)


def recover_boundary_jet2(probes: BoundaryProbeSet, stage0: StageResult, stage1: StageResult) -> StageResult:
    """(∂²ₙh, db(N, ∂_α), q) from the λ^{-1} coefficients."""
    _, _, cm1 = probes.coefficients()
    jet = _base_jet(probes.alpha, h0=stage0.values["h0"], h1=stage1.values["h1"], b0=stage1.values["b0"])
    return _affine_solve(jet, probes.omegas, cm1, ("h2", "b1", "q0"), 2)


@dataclass
class BoundaryRecovery:
    jet: BoundaryJet
    stages: typing.Tuple[StageResult, StageResult, StageResult]

    @property
    def flagged(self) -> Array:
        return self.stages[0].flagged | self.stages[1].flagged | self.stages[2].flagged


def recover_boundary_jet(probes: BoundaryProbeSet) -> BoundaryRecovery:
    stage0 = recover_boundary_metric(probes)
    stage1 = recover_boundary_jet1(probes, stage0)
    stage2 = recover_boundary_jet2(probes, stage0, stage1)
    h0, h1, h2 = stage0.values["h0"], stage1.values["h1"], stage2.values["h2"]
    jet = BoundaryJet(
        alpha=probes.alpha,
        h0=h0,
        h1=h1,
        h2=h2,
        b0=stage1.values["b0"],
        b1=stage2.values["b1"],
        q0=stage2.values["q0"],
        curvature=(h1**2 / (2 * h0) - h2) / (2 * h0),
        residuals={"stage0": stage0.residual, "stage1": stage1.residual, "stage2": stage2.residual},
    )
    return BoundaryRecovery(jet, (stage0, stage1, stage2))


def jet_errors(recovered: BoundaryJet, reference: BoundaryJet) -> typing.Dict[str, float]:
    """Per-stage sup errors: stage 0 (h₀), stage 1 (h₁, b₀), stage 2 (h₂, b₁, q₀)."""

    def sup(name: str) -> float:
        return float(np.abs(getattr(recovered, name) - getattr(reference, name)).max())

    return {
        "stage0": sup("h0"),
        "stage1": max(sup("h1"), sup("b0")),
        "stage2": max(sup("h2"), sup("b1"), sup("q0")),
    }


@dataclass
class CascadeReport:
    deltas: Array
    errors: typing.Dict[str, Array]
    slopes: typing.Dict[str, float]


def cascade_experiment(
    t: CoefficientTriple,
    deltas: typing.Sequence[float] = CASCADE_DELTAS,
    n_alpha: int = 32,
    seed: int = 0,
    threads: int = 1,
) -> CascadeReport:
    """Noise sweep of the balanced boundary recovery; slopes should approach 1, ½ and ¼."""
    reference = boundary_jet(t, n_alpha)
    errors: typing.Dict[str, typing.List[float]] = {"stage0": [], "stage1": [], "stage2": []}
    for k, delta in enumerate(deltas):
        probes = collect_boundary_probes(t, n_alpha=n_alpha, noise=delta, seed=seed + k, threads=threads)
        stage_errors = jet_errors(recover_boundary_jet(probes).jet, reference)
        for name, value in stage_errors.items():
            errors[name].append(value)
        logger.info("Cascade δ=%.1e: %s", delta, ", ".join("%s %.3e" % kv for kv in stage_errors.items()))
    log_delta = np.log(np.asarray(deltas))
    slopes = {name: float(np.polyfit(log_delta, np.log(np.asarray(values)), 1)[0]) for name, values in errors.items()}
    return CascadeReport(np.asarray(deltas), {k: np.asarray(v) for k, v in errors.items()}, slopes)


# Near-boundary modification


@dataclass
class ModificationResult:
    triple: CoefficientTriple
    depth: float
    clipped: bool
    change: float
    prediction: float


def modify_near_boundary(
    t_tilde: CoefficientTriple,
    t: CoefficientTriple,
    jet: typing.Optional[BoundaryJet],
    delta: float,
    M: float = DEFAULT_M,
    m: int = 2,
    mu: float = MU_TARGET,
    n: int = STANDARD_GRID,
    layer_depth: float = 0.5,
) -> ModificationResult:
    """
    t̃₁ = t̃ + χ(δ^{-1/M}ρ)(t − t̃), with ρ the g̃-normal distance to ∂Ω (negative
    outside) and χ = 1 below 1, 0 above 2. t̃₁ agrees with t for ρ ≤ δ^{1/M}.
    ``jet`` is the recovered boundary jet of ``t``, used for logging only.
    """
    depth = delta ** (1.0 / M)
    if t_tilde is t:
        return ModificationResult(t, depth, False, 0.0, delta ** (mu / 2))
    layer = BoundaryLayer(t_tilde.g, t_tilde.domain, layer_depth)
    clipped = 2 * depth > layer.valid_depth
    if clipped:
        logger.warning("Modification depth %.4g clipped to the chart depth %.4g.", 2 * depth, layer.valid_depth)
        depth = 0.5 * layer.valid_depth
    points, bbox = standard_points(t.domain, n)
    _, r, converged = layer.inverse(points)
    radius = np.linalg.norm(points, axis=-1)
    r = np.where(converged, r, np.where(radius >= t.domain.boundary_radius, 0.0, np.inf))
    weight, _, _ = cutoff(np.clip(r / depth, 0.0, None) / 2.0)
    weight = np.where(np.isfinite(r), weight, 0.0)

    g_values = t_tilde.g.eval(points) + weight[..., None, None] * (t.g.eval(points) - t_tilde.g.eval(points))
    b_values = t_tilde.b.eval(points) + weight[..., None] * (t.b.eval(points) - t_tilde.b.eval(points))
    q_values = t_tilde.q.eval(points) + weight * (t.q.eval(points) - t_tilde.q.eval(points))
    modified = t_tilde.replace(
        g=GridMetric(g_values, bbox, identifier="modified:%s" % getattr(t_tilde.g, "identifier", "g")),
        b=GridCovectorField(b_values, bbox),
        q=GridScalarField(q_values, bbox),
        name="%s|modified" % t_tilde.name,
    )
    h = (bbox[1] - bbox[0]) / (n - 1)
    mask = radius <= t.domain.boundary_radius
    change = ck_norm(g_values - t_tilde.g.eval(points), h, m, mask)
    prediction = delta ** (mu / 2)
    logger.info("Modification at depth %.4g: C^%d change %.3e against δ^{μ/2} = %.3e.", depth, m, change, prediction)
    if jet is not None:
        logger.debug("Boundary jet residuals %s.", jet.residuals)
    return ModificationResult(modified, depth, clipped, change, prediction)


# Fans from the exterior collar


@dataclass
class FanSamples:
    alpha: Array
    beta: Array
    values: Array
    skipped: int


def _source_points(n_sources: int, radius: float) -> Array:
    angles = 2 * np.pi * (np.arange(n_sources) + 0.5) / n_sources
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def _global_fits(
    t: CoefficientTriple,
    z0: Array,
    lams: typing.Sequence[float],
    eps: float,
    t0: float,
    ray_stride: int,
) -> typing.Tuple[Array, Array, Array, Array, typing.Any, typing.Any]:
    """Per fan ray: fan angle, (ĉ₁, ĉ₀) from records over ``lams``, plus chart and model coefficients."""
    chart = solve_eikonal_global(t.g, z0, b=t.b, domain=t.domain)
    coefficients = global_coefficients(t, chart)
    margin = chart.angles[-1] - eps
    rows = np.flatnonzero(coefficients.hits & (np.abs(chart.angles) <= margin))[::ray_stride]
    thetas, c1, c0 = [], [], []
    for k in rows:
        values = []
        try:
            for lam in lams:
                probe = ProbeConfig(kind="global", lam=float(lam), t0=t0, eps=eps, z0=(float(z0[0]), float(z0[1])), theta0=float(chart.angles[k]))
                values.append(global_record(t, probe, chart, coefficients).demodulated())
        except ProbeError:
            continue
        fit1, fit0 = fit_lambda_coefficients(np.asarray(values), lams, terms=2)
        thetas.append(chart.angles[k])
        c1.append(complex(fit1))
        c0.append(complex(fit0))
    return np.asarray(thetas), np.asarray(c1), np.asarray(c0), rows, chart, coefficients


def _entry_nodes(t: CoefficientTriple, chart: typing.Any, thetas: Array) -> typing.Tuple[Array, Array]:
    rows = np.flatnonzero(chart.hits)
    entry = np.array([np.interp(thetas, chart.angles[rows], chart.entry_point[rows, i]) for i in range(2)]).T
    covector = np.array([np.interp(thetas, chart.angles[rows], chart.entry_covector[rows, i]) for i in range(2)]).T
    velocity = np.einsum("nij,nj->ni", t.g.inverse(entry), covector)
    grid = InflowGrid(radius=t.domain.boundary_radius)
    return grid.locate(t.g, entry, velocity)


def _assemble(grid: InflowGrid, samples: FanSamples) -> typing.Tuple[Array, Array]:
    """Scatter (α, β, value) onto the Γ₋ nodes, periodic in α."""
    alpha = np.concatenate([samples.alpha - 2 * np.pi, samples.alpha, samples.alpha + 2 * np.pi])
    beta = np.tile(samples.beta, 3)
    values = np.tile(samples.values, 3)
    interpolator = LinearNDInterpolator(np.stack([alpha, beta], axis=-1), values)
    aa, bb = np.meshgrid(grid.alpha, grid.beta, indexing="ij")
    out = interpolator(np.stack([aa, bb], axis=-1))
    return np.nan_to_num(out), np.isfinite(out)


@dataclass
class SinogramExtraction:
    sinogram: Sinogram
    flagged: Array
    samples: FanSamples
    imaginary_residual: float = 0.0


def _fan_pairs(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    n_sources: int,
    source_radius: float,
    lams: typing.Sequence[float],
    eps: float,
    t0: float,
    ray_stride: int,
    threads: int,
) -> typing.List[typing.Optional[typing.Tuple[typing.Any, ...]]]:
    def work(z0: Array) -> typing.Optional[typing.Tuple[typing.Any, ...]]:
        try:
            first = _global_fits(t, z0, lams, eps, t0, ray_stride)
            second = _global_fits(t_tilde, z0, lams, eps, t0, ray_stride)
        except SimplerayError as exc:
            logger.warning("Source at %r skipped: %s", tuple(z0), exc)
            return None
        return first, second

    return parallel_map(work, list(_source_points(n_sources, source_radius)), threads)


def _common(first: typing.Tuple[typing.Any, ...], second: typing.Tuple[typing.Any, ...]) -> typing.Tuple[Array, Array, Array]:
    thetas, thetas_tilde = first[0], second[0]
    common, i, j = np.intersect1d(np.round(thetas, 12), np.round(thetas_tilde, 12), return_indices=True)
    return thetas[i], i, j


def unwrap_valid(values: Array, valid: Array) -> Array:
    """Unwrap each row of phases along its valid nodes only; invalid nodes read zero."""
    out = np.zeros_like(values)
    for k in range(values.shape[0]):
        rows = np.flatnonzero(valid[k])
        out[k, rows] = np.unwrap(values[k, rows])
    return out


def extract_b_sinogram(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    grid: typing.Optional[InflowGrid] = None,
    lams: typing.Sequence[float] = GLOBAL_LAMBDAS,
    n_sources: int = 48,
    source_radius: float = SOURCE_RADIUS,
    ray_stride: int = 4,
    eps: float = 0.25,
    t0: float = 0.5,
    threads: int = 1,
) -> SinogramExtraction:
    """∫(b − b̃) along g-geodesics from the phase of ĉ₁/c̃̂₁ over fans around ∂Ω₁."""
    grid = grid or InflowGrid(radius=t.domain.boundary_radius)
    pairs = _fan_pairs(t, t_tilde, n_sources, source_radius, lams, eps, t0, ray_stride, threads)
    alphas, betas, values = [], [], []
    skipped = 0
    for pair in pairs:
        if pair is None:
            skipped += 1
            continue
        first, second = pair
        thetas, i, j = _common(first, second)
        phase = np.angle(first[1][i] / second[1][j])
        alpha, beta = _entry_nodes(t, first[4], thetas)
        alphas.append(alpha)
        betas.append(beta)
        values.append(phase)
    samples = FanSamples(np.concatenate(alphas), np.concatenate(betas), np.concatenate(values), skipped)
    raw, valid = _assemble(grid, samples)
    unwrapped = unwrap_valid(raw, valid)
    flagged = valid & (np.abs(unwrapped) > np.pi)
    if flagged.any():
        logger.warning("%d Γ₋ nodes have |∫δb| > π.", int(flagged.sum()))
    sinogram = Sinogram(
        grid=grid,
        values=np.where(valid, unwrapped, 0.0),
        tensor_order=1,
        metric_id=getattr(t.g, "identifier", "metric"),
        valid=valid & ~flagged,
        weights=grid.initial_data(t.g).weights,
    )
    return SinogramExtraction(sinogram, flagged, samples)


def extract_q_sinogram(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    grid: typing.Optional[InflowGrid] = None,
    lams: typing.Sequence[float] = GLOBAL_LAMBDAS,
    n_sources: int = 48,
    source_radius: float = SOURCE_RADIUS,
    ray_stride: int = 4,
    eps: float = 0.25,
    t0: float = 0.5,
    threads: int = 1,
) -> SinogramExtraction:
    """
    ∫(q − q̃) from w = (ĉ₀ − R)/ĉ₁ with R the reflection term, after removing
    the geometric part of w computed for each reference triple with q = 0.
    """
    if len(lams) < 2:
        msg = "The potential extraction needs at least two frequencies, got %d."
        raise ProbeError(msg % len(lams))
    grid = grid or InflowGrid(radius=t.domain.boundary_radius)
    pairs = _fan_pairs(t, t_tilde, n_sources, source_radius, lams, eps, t0, ray_stride, threads)
    zero = ConstantScalar(0.0)
    alphas, betas, values, imaginary = [], [], [], []
    skipped = 0
    for pair in pairs:
        if pair is None:
            skipped += 1
            continue
        first, second = pair
        thetas, i, j = _common(first, second)
        integrals = []
        for fits, triple, index in ((first, t, i), (second, t_tilde, j)):
            chart, model = fits[4], fits[5]
            geometric = global_coefficients(triple.replace(q=zero), chart)
            hits = np.flatnonzero(model.hits)
            reflection = np.interp(thetas, chart.angles[hits], model.reflection[hits].real) + 1j * np.interp(
                thetas, chart.angles[hits], model.reflection[hits].imag
            )
            w0 = np.interp(thetas, chart.angles[hits], geometric.w[hits].real) + 1j * np.interp(
                thetas, chart.angles[hits], geometric.w[hits].imag
            )
            w = (fits[2][index] - reflection) / fits[1][index]
            integrals.append((2 / 1j) * (w - w0))
        difference = integrals[0] - integrals[1]
        alpha, beta = _entry_nodes(t, first[4], thetas)
        alphas.append(alpha)
        betas.append(beta)
        values.append(difference.real)
        imaginary.append(np.abs(difference.imag))
    samples = FanSamples(np.concatenate(alphas), np.concatenate(betas), np.concatenate(values), skipped)
    raw, valid = _assemble(grid, samples)
    sinogram = Sinogram(
        grid=grid,
        values=raw,
        tensor_order=0,
        metric_id=getattr(t.g, "identifier", "metric"),
        valid=valid,
        weights=grid.initial_data(t.g).weights,
    )
    residual = float(np.concatenate(imaginary).max()) if imaginary else 0.0
    return SinogramExtraction(sinogram, np.zeros(grid.shape, dtype=bool), samples, residual)


# Distances


@dataclass
class DnDistanceTable:
    alpha_x: Array
    alpha_y: Array
    lengths: Array


def distance_table_from_dn(
    t: CoefficientTriple,
    n_sources: int = 16,
    thetas: typing.Sequence[float] = (0.0,),
    source_radius: float = SOURCE_RADIUS,
    lam: float = 64.0,
    c_one: float = C_ONE,
    eps: float = 0.25,
    t0: float = 0.5,
    threads: int = 1,
) -> DnDistanceTable:
    """
    Travel times from global probes. Exit columns whose energy is within a
    factor 1 − 1/C₁ of the peak form the arrival set; its middle column gives
    α_y and its energy-weighted arrival time minus t₀ is the length.
    """

    def work(z0: Array) -> typing.List[typing.Tuple[float, float, float]]:
        chart = solve_eikonal_global(t.g, z0, b=t.b, domain=t.domain)
        coefficients = global_coefficients(t, chart)
        rows = np.flatnonzero(coefficients.hits)
        out = []
        for theta in thetas:
            probe = ProbeConfig(kind="global", lam=lam, t0=t0, eps=eps, z0=(float(z0[0]), float(z0[1])), theta0=float(theta))
            try:
                record = global_record(t, probe, chart, coefficients)
            except ProbeError as exc:
                logger.warning("Distance probe skipped: %s", exc)
                continue
            energy = np.abs(record.trace) ** 2
            columns = energy.sum(axis=0)
            plateau = np.flatnonzero(columns >= (1.0 - 1.0 / c_one) * columns.max())
            j = int(plateau[len(plateau) // 2])
            arrival = float(np.sum(record.times * energy[:, j]) / energy[:, j].sum())
            alpha_x = float(np.interp(theta, chart.angles[rows], np.unwrap(coefficients.entry_angle[rows])))
            out.append((np.mod(alpha_x, 2 * np.pi), float(record.angles[j]), arrival - t0))
        return out

    rows = [row for chunk in parallel_map(work, list(_source_points(n_sources, source_radius)), threads) for row in chunk]
    table = np.asarray(rows).reshape(-1, 3)
    return DnDistanceTable(table[:, 0], table[:, 1], table[:, 2])


@dataclass
class InteriorRecovery:
    sinogram: Sinogram
    inversion: InversionResult

    @property
    def field(self) -> PixelField:
        return self.inversion.field


def recover_metric_interior(
    g: typing.Any,
    g0: typing.Any,
    grid: typing.Optional[InflowGrid] = None,
    pixels: typing.Optional[typing.Any] = None,
    distances: typing.Optional[typing.Callable[[Array, Array], Array]] = None,
    maxiter: int = 200,
) -> InteriorRecovery:
    """
    s = 2(ρ_g − ρ_{g₀}) on the g₀ inflow grid, inverted as an order-2
    transform; ``distances`` defaults to shooting in ``g``.
    """
    grid = grid or InflowGrid(48, 48)
    domain = grid.domain()
    data = grid.initial_data(g0)
    table = RayTable.trace(g0, grid)
    integrator = RayIntegrator(g0, grid.radius, default_step(domain), 20.0 * domain.diameter)
    bundle = integrator.run(data.points.reshape(-1, 2), data.covectors.reshape(-1, 2))
    alpha_x = data.alpha
    alpha_y = domain.angle_of(bundle.exit_point).reshape(grid.shape)
    reference = bundle.exit_time.reshape(grid.shape)
    if distances is None:
        lengths = distance_table(g, alpha_x, alpha_y, domain).lengths
    else:
        lengths = distances(alpha_x, alpha_y)
    values = 2.0 * (lengths - reference)
    valid = table.valid & np.isfinite(values)
    sinogram = Sinogram(grid, np.where(valid, values, 0.0), 2, getattr(g0, "identifier", "g0"), valid, data.weights)
    inversion = invert_xray(g0, sinogram, order=2, grid=pixels or pixel_grid(41), table=table, maxiter=maxiter)
    return InteriorRecovery(sinogram, inversion)


# Cᵏ norms


def _derivatives(values: Array, h: float, k: int) -> typing.List[Array]:
    levels = [[values]]
    for _ in range(k):
        levels.append([np.gradient(d, h, axis=a) for d in levels[-1] for a in (0, 1)])
    return [d for level in levels for d in level]


def ck_norm(values: Array, h: float, k: int, mask: typing.Optional[Array] = None) -> float:
    """max over |γ| ≤ k of sup |∂^γ f| by central differences; extra axes are components."""
    values = np.asarray(values, dtype=float)
    mask = np.ones(values.shape[:2], dtype=bool) if mask is None else mask
    best = 0.0
    for d in _derivatives(values, h, k):
        best = max(best, float(np.abs(d[mask]).max()))
    return best


@dataclass
class InterpolationCheck:
    norms: typing.Dict[int, float]
    order: int
    constant: float
    holds: bool


def ck_interp_norm(
    f: typing.Any,
    t1: int,
    t2: int,
    theta: float,
    domain: typing.Optional[typing.Any] = None,
    n: int = STANDARD_GRID,
    limit: float = INTERPOLATION_LIMIT,
) -> InterpolationCheck:
    """
    ‖f‖_{Cᵗ} ≤ C‖f‖_{C^{t1}}^{1−θ}‖f‖_{C^{t2}}^θ for the integer t = (1 − θ)t1 + θt2,
    on the standard grid restricted to Ω. ``f`` is a field or ``(values, h, mask)``.
    """
    order = (1 - theta) * t1 + theta * t2
    if abs(order - round(order)) > 1e-12:
        msg = "Interpolated order %.4g is not an integer."
        raise DomainError(msg % order)
    order = int(round(order))
    if max(t1, t2) > 4:
        msg = "Derivatives of order %d are not available on the sample grid."
        raise DomainError(msg % max(t1, t2))
    if isinstance(f, tuple):
        values, h, mask = f
    else:
        domain = domain or Domain()
        points, bbox = standard_points(domain, n)
        values = f.eval(points)
        h = (bbox[1] - bbox[0]) / (n - 1)
        mask = np.linalg.norm(points, axis=-1) <= domain.boundary_radius
    norms = {k: ck_norm(values, h, k, mask) for k in sorted({t1, t2, order})}
    bound = norms[t1] ** (1 - theta) * norms[t2] ** theta
    constant = norms[order] / bound if bound > 0 else 0.0
    logger.info("C^%d interpolation constant %.4g.", order, constant)
    return InterpolationCheck(norms, order, constant, constant <= limit)


# Hölder experiments


@dataclass(frozen=True)
class HolderSettings:
    family: str = "mixed"
    epsilons: typing.Tuple[float, ...] = (0.0, 0.0125, 0.025, 0.05, 0.1)
    dictionary: str = "wkb-48"
    seed: int = 0
    stages: typing.Tuple[str, ...] = PIPELINE_STAGES
    n_grid: int = 81
    M: float = DEFAULT_M
    mu: float = MU_TARGET
    threads: int = 1
    boundary_samples: int = 32
    n_sources: int = 16
    sinogram_grid: int = 32
    interior_grid: int = 48
    pixels: int = 41


def family_member(t: CoefficientTriple, family: str, epsilon: float, seed: int = 0) -> CoefficientTriple:
    """t̃(ε) with t̃(0) = t for the registry families."""
    if family not in FAMILIES:
        msg = "Unknown experiment family %r (expected one of %s)."
        raise ProbeError(msg % (family, ", ".join(FAMILIES)))
    if epsilon == 0:
        return t
    rng = np.random.default_rng(seed)
    center = tuple(rng.uniform(-0.25, 0.25, size=2))
    bump = CompactBump(center, 0.45)
    changes: typing.Dict[str, typing.Any] = {}
    if family in ("metric", "mixed"):
        changes["g"] = MetricPlusTensor(t.g, BumpTensor(bump, [[1.0, 0.3], [0.3, 0.6]]), epsilon, identifier="%s+%.3g" % (getattr(t.g, "identifier", "g"), epsilon))
    if family in ("covector", "mixed"):
        changes["b"] = CovectorSum([t.b, RotatedGradient(CompactBump(center, 0.5))], [1.0, epsilon])
    if family in ("potential", "mixed"):
        changes["q"] = ScalarSum([t.q, CompactBump(center, 0.4)], [1.0, epsilon])
    if family == "gauge":
        theta = ScalarSum([CompactBump(center, 0.5)], [epsilon])
        return act(GaugeElement.from_theta(theta, t.domain), t)
    changes["name"] = "%s:%s(%.3g)" % (t.name, family, epsilon)
    return t.replace(**changes)


def _points(t: CoefficientTriple, n: int) -> typing.Tuple[Array, float, Array]:
    points, bbox = standard_points(t.domain, n)
    return points, (bbox[1] - bbox[0]) / (n - 1), np.linalg.norm(points, axis=-1) <= t.domain.boundary_radius


def gauge_errors(t: CoefficientTriple, aligned: CoefficientTriple, n: int = 81) -> typing.Dict[str, float]:
    """C² metric, C¹ solenoidal-covector and C⁰ potential distances on Ω."""
    points, h, mask = _points(t, n)
    g_error = ck_norm(t.g.eval(points) - aligned.g.eval(points), h, 2, mask)
    pixels = pixel_grid(n, radius=t.domain.boundary_radius)
    difference = sample_pixels(CovectorSum([t.b, aligned.b], [1.0, -1.0]), pixels)
    solenoidal = solenoidal_project(t.g, difference).solenoidal
    inside = np.linalg.norm(pixels.points(), axis=-1) < t.domain.boundary_radius - 2 * pixels.spacing
    b_error = ck_norm(solenoidal.values, pixels.spacing, 1, inside)
    q_error = float(np.abs(t.q.eval(points) - aligned.q.eval(points))[mask].max())
    return {"g": g_error, "b": b_error, "q": q_error}


@dataclass
class PipelineReport:
    errors: typing.Dict[str, float]
    boundary: typing.Dict[str, float] = field(default_factory=dict)
    sinograms: typing.Dict[str, float] = field(default_factory=dict)
    estimate: typing.Optional[CoefficientTriple] = None


def run_pipeline(
    t: CoefficientTriple,
    t_tilde: CoefficientTriple,
    delta: float,
    settings: HolderSettings = HolderSettings(),
) -> PipelineReport:
    """
    Recovery stages for one pair. The estimate of t̃ is t with the inverted
    sinograms applied (g + f_g, b − f_b, q − f_q); it is aligned with the
    gauge recovered from its normal geodesics and measured against t.
    Components whose stage did not run report nan.
    """
    unknown = sorted(set(settings.stages) - set(PIPELINE_STAGES))
    if unknown:
        msg = "Unknown pipeline stage(s) %s (expected some of %s)."
        raise ProbeError(msg % (", ".join(unknown), ", ".join(PIPELINE_STAGES)))
    boundary: typing.Dict[str, float] = {}
    sinograms: typing.Dict[str, float] = {}
    jet = None
    if "boundary" in settings.stages:
        n_alpha = settings.boundary_samples
        jet = recover_boundary_jet(collect_boundary_probes(t, n_alpha=n_alpha, threads=settings.threads)).jet
        second = recover_boundary_jet(collect_boundary_probes(t_tilde, n_alpha=n_alpha, threads=settings.threads)).jet
        boundary = jet_errors(second, jet)
    working = t_tilde
    if "modify" in settings.stages and delta > 0:
        working = modify_near_boundary(t_tilde, t, jet, delta, settings.M, mu=settings.mu).triple
    pixels = pixel_grid(settings.pixels, radius=t.domain.boundary_radius)
    fans = InflowGrid(settings.sinogram_grid, settings.sinogram_grid, radius=t.domain.boundary_radius)
    changes: typing.Dict[str, typing.Any] = {}
    if "b" in settings.stages:
        extraction = extract_b_sinogram(t, working, fans, n_sources=settings.n_sources, threads=settings.threads)
        sinograms["b"] = extraction.sinogram.norm()
        recovered = invert_xray(t.g, extraction.sinogram, order=1, grid=pixels).field.as_field()
        changes["b"] = CovectorSum([t.b, recovered], [1.0, -1.0])
    if "q" in settings.stages:
        extraction = extract_q_sinogram(t, working, fans, n_sources=settings.n_sources, threads=settings.threads)
        sinograms["q"] = extraction.sinogram.norm()
        recovered = invert_xray(t.g, extraction.sinogram, order=0, grid=pixels).field.as_field()
        changes["q"] = ScalarSum([t.q, recovered], [1.0, -1.0])
    if "interior" in settings.stages:
        grid = InflowGrid(settings.interior_grid, settings.interior_grid, radius=t.domain.boundary_radius)
        interior = recover_metric_interior(working.g, t.g, grid, pixels)
        sinograms["g"] = interior.sinogram.norm()
        identifier = "%s+interior" % getattr(t.g, "identifier", "g")
        changes["g"] = MetricPlusTensor(t.g, interior.field.as_field(), 1.0, identifier=identifier)
    if not changes:
        return PipelineReport({name: float("nan") for name in ("g", "b", "q")}, boundary, sinograms)
    estimate = t.replace(name="%s|estimate" % t_tilde.name, **changes)
    aligned = act(alignment_gauge(t, estimate), estimate)
    measured = gauge_errors(t, aligned, settings.n_grid)
    errors = {name: measured[name] if name in changes else float("nan") for name in ("g", "b", "q")}
    logger.info("Pipeline for %s: sinogram norms %s, errors %s.", t_tilde.name, sinograms, errors)
    return PipelineReport(errors, boundary, sinograms, estimate)


@dataclass
class ExperimentReport:
    family: str
    epsilons: Array
    deltas: Array
    errors: typing.Dict[str, Array]
    exponents: typing.Dict[str, float]
    bands: typing.Dict[str, typing.Tuple[float, float]]
    failures: typing.List[str]
    dictionary: str
    config_hash: str
    gauges: typing.List[str] = field(default_factory=list)
    caveat: str = "δ is a probe-dictionary proxy for the operator norm and may underestimate it."

    @property
    def delta_monotone(self) -> bool:
        order = np.argsort(self.epsilons)
        return bool(np.all(np.diff(self.deltas[order]) >= -1e-12))

    @property
    def exponent_cascade(self) -> bool:
        e = self.exponents
        return bool(e.get("g", np.nan) >= e.get("b", np.nan) >= e.get("q", np.nan))


def fit_exponent(deltas: Array, errors: Array) -> typing.Tuple[float, typing.Tuple[float, float]]:
    """Slope of log error against log δ with a two-sigma band."""
    usable = (deltas > 0) & (errors > 0) & np.isfinite(deltas) & np.isfinite(errors)
    if usable.sum() < 4:
        return float("nan"), (float("nan"), float("nan"))
    coefficients, covariance = np.polyfit(np.log(deltas[usable]), np.log(errors[usable]), 1, cov=True)
    sigma = float(np.sqrt(covariance[0, 0]))
    slope = float(coefficients[0])
    return slope, (slope - 2 * sigma, slope + 2 * sigma)


def settings_hash(settings: HolderSettings) -> str:
    payload = json.dumps(settings.__dict__, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def holder_experiment(t: CoefficientTriple, settings: HolderSettings = HolderSettings()) -> ExperimentReport:
    dictionary = ProbeDictionary.build(settings.dictionary)
    epsilons = np.asarray(settings.epsilons, dtype=float)
    deltas = np.full(len(epsilons), np.nan)
    errors = {name: np.full(len(epsilons), np.nan) for name in ("g", "b", "q")}
    failures: typing.List[str] = []
    gauges: typing.List[str] = []
    for k, epsilon in enumerate(epsilons):
        try:
            member = family_member(t, settings.family, float(epsilon), settings.seed)
            gap = dn_operator_gap(t, member, dictionary, threads=settings.threads)
            deltas[k] = gap.delta
            report = run_pipeline(t, member, gap.delta, settings)
        except SimplerayError as exc:
            failures.append("ε=%.4g: %s" % (epsilon, exc))
            logger.warning("Experiment member ε=%.4g failed: %s", epsilon, exc)
            continue
        gauges.append("align:%s" % member.name)
        for name, value in report.errors.items():
            errors[name][k] = value
        logger.info("ε=%.4g δ=%.4g errors %s", epsilon, deltas[k], report.errors)
    exponents: typing.Dict[str, float] = {}
    bands: typing.Dict[str, typing.Tuple[float, float]] = {}
    for name, values in errors.items():
        exponents[name], bands[name] = fit_exponent(deltas, values)
    successes = int(np.sum(np.isfinite(deltas) & (epsilons > 0)))
    if successes < 4:
        failures.append("exponent fit needs 4 successful ε values, got %d" % successes)
    return ExperimentReport(
        family=settings.family,
        epsilons=epsilons,
        deltas=deltas,
        errors=errors,
        exponents=exponents,
        bands=bands,
        failures=failures,
        dictionary=dictionary.version,
        config_hash=settings_hash(settings),
        gauges=gauges,
    )
