"""
Geometric optics for the magnetic wave operator: probes, phases, transport
amplitudes and asymptotic Dirichlet-to-Neumann traces.

Local probes live near a boundary point and use the planar boundary phase
φ|∂Ω = ω′s. Global probes start at z₀ outside Ω and use φ = dist_g(·, z₀);
their trace is read on the exit patch after a single reflection.
"""
import functools
import logging
import typing
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_simpson, trapezoid
from scipy.interpolate import CloughTocher2DInterpolator, CubicSpline

from simpleray.charts_gauge import BoundaryJet, SemiGeodesicChart, boundary_jet, spectral_derivative
from simpleray.exceptions import GlancingError, ProbeError
from simpleray.fields import Array, CovectorField, MetricField, cutoff
from simpleray.geodesics import RayIntegrator, wrap_angle
from simpleray.manifold import CoefficientTriple, Domain, christoffel, rotate_unit

logger = logging.getLogger("simpleray.error")

LAMBDA_SWEEP = (16.0, 32.0, 64.0, 128.0)
MOMENT_RADIUS = 1.0 / np.sqrt(2.0)
GLOBAL_FAN = 257
TRANSPORT_TOLERANCE = 1e-6


@dataclass(frozen=True)
class ProbeConfig:
    """
    A boundary source e^{iλ(t − φ)}χ. ``x0`` is the boundary angle of a local
    probe; global probes start at ``z0`` in direction ``theta0`` (angle in a
    g-orthonormal frame at z₀ whose first axis points at the origin). ``eps``
    is the cutoff radius in time and in the boundary (or fan) variable.
    """

    kind: str = "local"
    lam: float = 32.0
    t0: float = 0.5
    x0: float = 0.0
    omega: float = 0.0
    eps: float = 0.25
    t_end: float = 1.0
    order: int = 1
    window: float = 1.0
    profile: str = "c3-bump"
    z0: typing.Tuple[float, float] = (-1.1, 0.0)
    theta0: float = 0.0

    def check(self) -> None:
        if self.kind not in ("local", "global"):
            msg = "Unknown probe kind %r."
            raise ProbeError(msg % self.kind)
        if not 0 < self.t0 < self.window:
            msg = "Probe centre time %.4g is not inside (0, %.4g)."
            raise ProbeError(msg % (self.t0, self.window))
        if not 0 < self.eps < min(self.t0, self.window - self.t0):
            msg = "Cutoff radius %.4g must be below min(t0, window − t0) = %.4g."
            raise ProbeError(msg % (self.eps, min(self.t0, self.window - self.t0)))
        if self.order not in (0, 1):
            msg = "Amplitude order %r is not supported."
            raise ProbeError(msg % self.order)
        if self.lam <= 0:
            msg = "Frequency must be positive, got %r."
            raise ProbeError(msg % self.lam)

    def with_lambda(self, lam: float) -> "ProbeConfig":
        return replace(self, lam=float(lam))

    def as_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "kind": self.kind,
            "lam": self.lam,
            "t0": self.t0,
            "x0": self.x0,
            "omega": self.omega,
            "eps": self.eps,
            "t_end": self.t_end,
            "order": self.order,
            "window": self.window,
            "profile": self.profile,
            "z0": list(self.z0),
            "theta0": self.theta0,
        }


@dataclass
class DnRecord:
    """
    A DN trace on a (time × boundary angle) grid. The trace near the centre
    is e^{iλ(t − phase_reference)} times a slowly varying amplitude.
    """

    times: Array
    angles: Array
    trace: Array
    probe: ProbeConfig
    source_norm: float
    provenance: str
    center_time: float
    center_angle: float
    phase_reference: float = 0.0
    metric_id: str = "metric"
    column_phase: typing.Optional[Array] = None

    def center_value(self) -> complex:
        """Trace at (center_time, center_angle), cubic in time at the nearest angle."""
        j = int(np.argmin(np.abs(wrap_angle(self.angles - self.center_angle))))
        column = self.trace[:, j]
        if len(self.times) < 4:
            i = int(np.argmin(np.abs(self.times - self.center_time)))
            return complex(column[i])
        real = CubicSpline(self.times, column.real)(self.center_time)
        imag = CubicSpline(self.times, column.imag)(self.center_time)
        return complex(real + 1j * imag)

    def demodulated(self) -> complex:
        """Slow amplitude at the centre, interpolated across columns when their phases are known."""
        lam = self.probe.lam
        if self.column_phase is None or len(self.angles) < 4 or len(self.times) < 4:
            return self.center_value() * np.exp(-1j * lam * (self.center_time - self.phase_reference))
        column = CubicSpline(self.times, self.trace.real, axis=0)(self.center_time) + 1j * CubicSpline(
            self.times, self.trace.imag, axis=0
        )(self.center_time)
        amplitude = column * np.exp(-1j * lam * (self.center_time - self.column_phase))
        angles = self.center_angle + wrap_angle(self.angles - self.center_angle)
        order = np.argsort(angles)
        real = CubicSpline(angles[order], amplitude.real[order])(self.center_angle)
        imag = CubicSpline(angles[order], amplitude.imag[order])(self.center_angle)
        return complex(real + 1j * imag)

    def amplitude(self) -> Array:
        """trace · e^{−iλ(t − column_phase)}."""
        if self.column_phase is None:
            msg = "Record from %s carries no column phases."
            raise ProbeError(msg % self.provenance)
        return self.trace * np.exp(-1j * self.probe.lam * (self.times[:, None] - self.column_phase[None, :]))

    def l2_norm(self, other: typing.Optional["DnRecord"] = None, arclength: typing.Optional[Array] = None) -> float:
        """L² norm over the record grid, of the difference when ``other`` is given."""
        values = self.trace if other is None else self.trace - other.trace
        dt = np.gradient(self.times) if len(self.times) > 1 else np.ones(1)
        ds = arclength if arclength is not None else _angle_widths(self.angles)
        return float(np.sqrt(np.sum(np.abs(values) ** 2 * dt[:, None] * ds[None, :])))


def _angle_widths(angles: Array) -> Array:
    if len(angles) < 2:
        return np.ones(len(angles))
    unwrapped = np.unwrap(angles)
    return np.abs(np.gradient(unwrapped))


# Cutoffs


@dataclass
class CutoffJet:
    value: Array
    t: Array
    s: Array
    tt: Array
    ss: Array
    ts: Array


def probe_cutoff(t: Array, s: Array, t0: float, eps: float) -> CutoffJet:
    """χ(t, s) = ψ(|t − t₀|/ε)ψ(|s|/ε) on the grid ``t[:, None]``, ``s[None, :]``."""
    dt = np.asarray(t, dtype=float)[:, None] - t0
    ds = np.asarray(s, dtype=float)[None, :]
    pt, pt1, pt2 = cutoff(np.abs(dt) / eps)
    ps, ps1, ps2 = cutoff(np.abs(ds) / eps)
    st = np.sign(dt) / eps
    ss = np.sign(ds) / eps
    return CutoffJet(
        value=pt * ps,
        t=pt1 * st * ps,
        s=pt * ps1 * ss,
        tt=pt2 / eps**2 * ps,
        ss=pt * ps2 / eps**2,
        ts=pt1 * st * ps1 * ss,
    )


# Local probes


@dataclass
class LocalTerms:
    """Boundary arrays entering the local trace for one tangential frequency."""

    omega: float
    m: Array
    a0: Array
    a_r: Array
    a_s: Array
    p_r: Array
    m_r: Array
    K: Array
    E_r: Array
    U: Array
    V: Array
    W: Array
    U_s: Array
    V_s: Array
    W_s: Array
    beta_s: Array
    jet: BoundaryJet


def local_terms(jet: BoundaryJet, omega: float) -> LocalTerms:
    D = spectral_derivative
    h0, h1, h2 = jet.h0, jet.h1, jet.h2
    beta, B = jet.b0, jet.b1
    a0 = 1.0 / h0
    a_r = -h1 / h0**2
    a_rr = -h2 / h0**2 + 2.0 * h1**2 / h0**3
    a_s = D(a0)
    a_sr = D(a_r)
    m2 = 1.0 - a0 * omega**2
    if np.any(m2 <= 0):
        msg = "Probe frequency %.4g is glancing (min 1 − |ω′|² = %.3e)."
        raise GlancingError(msg % (omega, float(m2.min())))
    m = np.sqrt(m2)
    p_r = D(m)
    p_rs = D(p_r)
    m_r = -(a_r * omega**2 + 2.0 * a0 * omega * p_r) / (2.0 * m)
    p_rr = D(m_r)
    m_rr = -(
        a_rr * omega**2 + 4.0 * a_r * omega * p_r + 2.0 * a0 * (p_r**2 + omega * p_rr) + 2.0 * m_r**2
    ) / (2.0 * m)
    ratio = h1 / (2.0 * h0)
    lap = 0.5 * a_s * omega + ratio * m + m_r
    lap_r = (
        0.5 * a_sr * omega
        + 0.5 * a_s * p_r
        + a0 * p_rs
        + (h2 / (2.0 * h0) - h1**2 / (2.0 * h0**2)) * m
        + ratio * m_r
        + m_rr
    )
    K = 2j * a0 * beta * omega - lap
    E_r = 2j * (a_r * beta * omega + a0 * B * omega + a0 * beta * p_r) - lap_r
    U = K / (2.0 * m)
    V = -1.0 / m
    W = -a0 * omega / m
    return LocalTerms(
        omega=omega,
        m=m,
        a0=a0,
        a_r=a_r,
        a_s=a_s,
        p_r=p_r,
        m_r=m_r,
        K=K,
        E_r=E_r,
        U=U,
        V=V,
        W=W,
        U_s=D(U),
        V_s=D(V),
        W_s=D(W),
        beta_s=D(beta),
        jet=jet,
    )


def local_coefficients(terms: LocalTerms, chi: CutoffJet, columns: typing.Optional[Array] = None) -> typing.Tuple[Array, Array, Array]:
    """
    (c₁, c₀, c₋₁) with Λf = e^{iλ(t − ω′s)}(λc₁ + c₀ + λ^{-1}c₋₁) + O(λ^{-2}),
    evaluated on the cutoff grid. ``columns`` selects jet samples matching
    the angle axis of ``chi``.
    """
    sel = slice(None) if columns is None else columns
    jet = terms.jet
    omega = terms.omega

    def pick(values: Array) -> Array:
        return values[sel][None, :]

    m, a0, a_r, a_s, p_r, m_r = (pick(v) for v in (terms.m, terms.a0, terms.a_r, terms.a_s, terms.p_r, terms.m_r))
    K, E_r, U, V, W = (pick(v) for v in (terms.K, terms.E_r, terms.U, terms.V, terms.W))
    U_s, V_s, W_s = (pick(v) for v in (terms.U_s, terms.V_s, terms.W_s))
    beta, beta_s, h0, h1, q0 = (pick(v) for v in (jet.b0, terms.beta_s, jet.h0, jet.h1, jet.q0))

    A = U * chi.value + V * chi.t + W * chi.s
    A_t = U * chi.t + V * chi.tt + W * chi.ts
    A_s = U_s * chi.value + U * chi.s + V_s * chi.t + V * chi.ts + W_s * chi.s + W * chi.ss
    A_rr = (
        E_r * chi.value
        + K * A
        - 2.0 * A_t
        - 2.0 * (a_r * omega + a0 * p_r) * chi.s
        - 2.0 * a0 * omega * A_s
    ) / (2.0 * m) - A * m_r / m
    magnetic = chi.s - 1j * beta * chi.value
    T1 = (
        0.5 * a_s * magnetic
        + a0 * (chi.ss - 1j * beta_s * chi.value - 1j * beta * chi.s)
        - 1j * beta * a0 * magnetic
    )
    SA = chi.tt - T1 - h1 / (2.0 * h0) * A - A_rr + q0 * chi.value
    return 1j * m * chi.value, -A, -1j * SA / (2.0 * m)


def trace_coefficients(jet: BoundaryJet, omega: float) -> typing.Tuple[Array, Array, Array]:
    """(c₁, c₀, c₋₁) per boundary sample on the flat part of χ."""
    terms = local_terms(jet, omega)
    n = jet.size
    flat = CutoffJet(np.ones((1, n)), *(np.zeros((1, n)) for _ in range(5)))
    c1, c0, cm1 = local_coefficients(terms, flat)
    return c1[0], c0[0], cm1[0]


def _patch(jet: BoundaryJet, probe: ProbeConfig) -> typing.Tuple[Array, Array]:
    s_rel = wrap_angle(jet.alpha - probe.x0)
    columns = np.flatnonzero(np.abs(s_rel) <= probe.eps)
    return columns, s_rel[columns]


def _time_grid(probe: ProbeConfig, n_times: int) -> Array:
    return np.linspace(probe.t0 - probe.eps, probe.t0 + probe.eps, n_times)


def local_trace(
    jet: BoundaryJet,
    probe: ProbeConfig,
    times: typing.Optional[Array] = None,
    n_times: int = 33,
) -> typing.Tuple[Array, Array, Array]:
    """(times, angles, trace) of a local probe on its patch."""
    times = _time_grid(probe, n_times) if times is None else np.asarray(times, dtype=float)
    columns, s_rel = _patch(jet, probe)
    chi = probe_cutoff(times, s_rel, probe.t0, probe.eps)
    c1, c0, cm1 = local_coefficients(local_terms(jet, probe.omega), chi, columns)
    phase = np.exp(1j * probe.lam * (times[:, None] - probe.omega * s_rel[None, :]))
    amplitude = probe.lam * c1 + c0
    if probe.order >= 1:
        amplitude = amplitude + cm1 / probe.lam
    return times, jet.alpha[columns], phase * amplitude


def source_trace(probe: ProbeConfig, times: Array, angles: Array, source: typing.Optional["GlobalSource"] = None) -> Array:
    """The boundary source f(t, α) on a (time × angle) grid."""
    times = np.asarray(times, dtype=float)
    if probe.kind == "global":
        if source is None:
            msg = "Global probes need their fan source to be sampled."
            raise ProbeError(msg)
        return source(times, angles)
    s_rel = wrap_angle(np.asarray(angles, dtype=float) - probe.x0)
    chi = probe_cutoff(times, s_rel, probe.t0, probe.eps).value
    return np.exp(1j * probe.lam * (times[:, None] - probe.omega * s_rel[None, :])) * chi


def probe_norm(probe: ProbeConfig, jet: BoundaryJet, n_times: int = 257) -> float:
    """‖f‖_{H¹} of a local probe source over its support, with the induced arclength."""
    times = _time_grid(probe, n_times)
    s_rel = wrap_angle(jet.alpha - probe.x0)
    chi = probe_cutoff(times, s_rel, probe.t0, probe.eps)
    e = np.exp(1j * probe.lam * (times[:, None] - probe.omega * s_rel[None, :]))
    f = e * chi.value
    f_t = e * (1j * probe.lam * chi.value + chi.t)
    f_s = e * (-1j * probe.lam * probe.omega * chi.value + chi.s)
    speed = np.sqrt(jet.h0)[None, :]
    density = np.abs(f) ** 2 + np.abs(f_t) ** 2 + np.abs(f_s) ** 2 / speed**2
    d_alpha = 2 * np.pi / jet.size
    integral = trapezoid(np.sum(density * speed, axis=1) * d_alpha, times)
    return float(np.sqrt(integral))


# Local eikonal


@dataclass
class EikonalSolution:
    """Characteristics of φ with φ|∂Ω = ω′s from a boundary patch, sampled along rays."""

    alpha: Array
    omega: float
    x: Array
    xi: Array
    phase_values: Array
    omega_n: Array
    boundary_residual: float
    g: MetricField

    @functools.cached_property
    def _interpolator(self) -> CloughTocher2DInterpolator:
        finite = np.isfinite(self.x[..., 0])
        return CloughTocher2DInterpolator(self.x[finite], self.phase_values[finite])

    def phase(self, x: Array) -> Array:
        return self._interpolator(np.asarray(x, dtype=float))

    def eikonal_residual(self) -> float:
        finite = np.isfinite(self.x[..., 0])
        xi = self.xi[finite]
        ginv = self.g.inverse(self.x[finite])
        return float(np.abs(np.einsum("ni,nij,nj->n", xi, ginv, xi) - 1.0).max())


def solve_eikonal_local(
    g: MetricField,
    x0: float,
    omega: float,
    domain: typing.Optional[Domain] = None,
    half_width: float = 0.3,
    depth: float = 0.2,
    n_rays: int = 41,
    step: float = 2e-3,
) -> EikonalSolution:
    """
    Rays leaving the boundary patch around ``x0`` with covector
    ξ = ω′ g τ/h₀ − ωₙ ν, where ωₙ = (1 − ω′²/h₀)^{1/2} and ν is the outward
    unit conormal; φ grows by arclength along each ray.
    """
    domain = domain or Domain()
    alpha = x0 + np.linspace(-half_width, half_width, n_rays)
    z = domain.boundary_point(alpha)
    tangent = domain.boundary_tangent(alpha)
    metric = g.eval(z)
    h0 = np.einsum("ni,nij,nj->n", tangent, metric, tangent)
    m2 = 1.0 - omega**2 / h0
    if np.any(m2 <= 0):
        msg = "Tangential frequency %.4g is glancing on the patch (min 1 − |ω′|² = %.3e)."
        raise GlancingError(msg % (omega, float(m2.min())))
    omega_n = np.sqrt(m2)
    nu = domain.conormal(g, alpha)
    xi0 = omega * np.einsum("nij,nj->ni", metric, tangent) / h0[:, None] - omega_n[:, None] * nu
    steps = int(np.ceil(depth / step))
    integrator = RayIntegrator(g, 1e3, step, (steps - 0.5) * step)
    bundle = integrator.run(z, xi0, expect_exit=False)
    x = bundle.x.reshape(n_rays, steps + 1, 2)
    xi = bundle.xi.reshape(n_rays, steps + 1, 2)
    rho = step * np.arange(steps + 1)
    phase_values = omega * wrap_angle(alpha - x0)[:, None] + rho[None, :]
    normal = domain.inward_normal(g, alpha)
    realised = np.einsum("ni,ni->n", xi[:, 0], normal)
    residual = float(np.abs(realised - omega_n).max())
    return EikonalSolution(alpha, omega, x, xi, phase_values, omega_n, residual, g)


# Global probes


def solve_eikonal_global(
    g: MetricField,
    z0: typing.Sequence[float],
    b: typing.Optional[CovectorField] = None,
    domain: typing.Optional[Domain] = None,
    n_rays: int = GLOBAL_FAN,
    min_distance: float = 0.02,
) -> SemiGeodesicChart:
    """φ = dist_g(·, z₀) as a semi-geodesic fan; z₀ must lie in Ω₁ \\ Ω̄."""
    return SemiGeodesicChart(g, z0, b=b, domain=domain, n_rays=n_rays, min_distance=min_distance)


@dataclass
class AmplitudeField:
    """Complex amplitude sampled on a fan (ray, step) lattice."""

    chart: SemiGeodesicChart
    values: Array
    residual: float
    extras: typing.Dict[str, Array] = field(default_factory=dict)

    def at_exit(self) -> Array:
        return self._along(self.chart.rho_exit)

    def at_entry(self) -> Array:
        return self._along(self.chart.rho_entry)

    def _along(self, rho: Array) -> Array:
        out = np.full(len(rho), np.nan + 0j)
        for k in np.flatnonzero(self.chart.hits):
            row = self.values[k]
            finite = np.isfinite(row)
            out[k] = np.interp(rho[k], self.chart.rho[finite], row[finite].real) + 1j * np.interp(
                rho[k], self.chart.rho[finite], row[finite].imag
            )
        return out


def _ray_velocity_component(chart: SemiGeodesicChart, b: CovectorField) -> Array:
    """b(γ̇) on the fan lattice."""
    out = np.full(chart.J.shape, np.nan)
    finite = np.isfinite(chart.x[..., 0])
    x = chart.x[finite]
    velocity = np.einsum("nij,nj->ni", chart.g.inverse(x), chart.xi[finite])
    out[finite] = np.einsum("ni,ni->n", b.eval(x), velocity)
    return out


def _derivative_along(values: Array, step: float) -> Array:
    """d/dρ of each lattice row by cubic splines over its finite samples."""
    out = np.full(values.shape, np.nan, dtype=values.dtype)
    for k in range(values.shape[0]):
        finite = np.flatnonzero(np.isfinite(values[k]))
        if len(finite) < 4:
            continue
        rho = step * finite
        if np.iscomplexobj(values):
            out[k, finite] = CubicSpline(rho, values[k, finite].real)(rho, 1) + 1j * CubicSpline(
                rho, values[k, finite].imag
            )(rho, 1)
        else:
            out[k, finite] = CubicSpline(rho, values[k, finite])(rho, 1)
    return out


def _inside_mask(chart: SemiGeodesicChart, margin: int = 3) -> Array:
    index = np.arange(chart.J.shape[1])[None, :]
    lo = np.where(chart.hits, chart.rho_entry / chart.step, np.inf)[:, None] + margin
    hi = np.where(chart.hits, chart.rho_exit / chart.step, -np.inf)[:, None] - margin
    return (index >= lo) & (index <= hi)


@np.errstate(divide="ignore", invalid="ignore")
def transport_A0(
    t: CoefficientTriple,
    chart: SemiGeodesicChart,
    chi: typing.Optional[typing.Callable[[Array, Array], Array]] = None,
) -> AmplitudeField:
    """
    A₀ = (J_e/J)^{1/2} e^{i(∫b − ∫b|_e)} along each ray, times χ(fan angle,
    ρ − ρ_e) when given. Extended past the entry point with the same formula.
    """
    J_e = chart.J_entry[:, None]
    values = np.sqrt(J_e / chart.J) * np.exp(1j * (chart.magnetic - chart.magnetic_entry[:, None]))
    if chi is not None:
        values = values * chi(chart.angles[:, None], chart.rho[None, :] - chart.rho_entry[:, None])
    values = np.where(chart.hits[:, None], values, np.nan)
    residual = 0.0
    b_dot = _ray_velocity_component(chart, t.b)
    derivative = _derivative_along(values, chart.step)
    inside = _inside_mask(chart) & np.isfinite(derivative)
    if inside.any():
        defect = derivative + (chart.Jp / (2 * chart.J) - 1j * b_dot) * values
        scale = float(np.nanmax(np.abs(values[inside])))
        residual = float(np.abs(defect[inside]).max()) / scale
    return AmplitudeField(chart, values, residual, {"b_dot": b_dot})


@np.errstate(divide="ignore", invalid="ignore")
def _angular_term(t: CoefficientTriple, chart: SemiGeodesicChart, A0: Array) -> Array:
    """(1/J)(∂_θ − ib_θ)[(1/J)(∂_θ − ib_θ)A₀] across the fan, b_θ = J b(E)."""
    finite = np.isfinite(chart.x[..., 0])
    b_normal = np.full(chart.J.shape, np.nan)
    x = chart.x[finite]
    E = rotate_unit(chart.g, x, chart.xi[finite])
    b_normal[finite] = np.einsum("ni,ni->n", t.b.eval(x), E)
    b_theta = chart.J * b_normal
    first = (np.gradient(A0, chart.d_angle, axis=0) - 1j * b_theta * A0) / chart.J
    return (np.gradient(first, chart.d_angle, axis=0) - 1j * b_theta * first) / chart.J


@np.errstate(divide="ignore", invalid="ignore")
def transport_A1(t: CoefficientTriple, chart: SemiGeodesicChart, A0: AmplitudeField) -> AmplitudeField:
    """
    A₁ = A₀ w with w = (i/2)∫_{ρ_e}^{ρ} P A₀/A₀ dρ, where P A₀/A₀ =
    q − K/2 − (J′/J)²/4 − (angular term)/A₀. Zero on the entry patch.
    """
    values = A0.values
    finite = np.isfinite(chart.x[..., 0])
    potential = np.full(chart.J.shape, np.nan)
    potential[finite] = t.q.eval(chart.x[finite])
    curvature = chart.curvature()
    angular = _angular_term(t, chart, values)
    q_eff = potential - 0.5 * curvature - 0.25 * (chart.Jp / chart.J) ** 2 - angular / values
    start = np.maximum(np.floor(np.nan_to_num(chart.rho_entry / chart.step, nan=0.0)).astype(int) - 2, 1)
    index = np.arange(chart.J.shape[1])[None, :]
    q_eff = np.where(index >= start[:, None], q_eff, 0.0)
    q_eff = np.where(chart.hits[:, None], q_eff, np.nan)
    real = cumulative_simpson(np.nan_to_num(q_eff.real), dx=chart.step, axis=1, initial=0.0)
    imag = cumulative_simpson(np.nan_to_num(q_eff.imag), dx=chart.step, axis=1, initial=0.0)
    integral = real + 1j * imag
    at_entry = np.array(
        [
            np.interp(chart.rho_entry[k], chart.rho, integral[k].real) + 1j * np.interp(chart.rho_entry[k], chart.rho, integral[k].imag)
            if chart.hits[k]
            else 0.0
            for k in range(len(chart.hits))
        ]
    )
    w = 0.5j * (integral - at_entry[:, None])
    w = np.where(np.isfinite(values), w, np.nan)
    A1 = values * w
    residual = 0.0
    derivative = _derivative_along(A1, chart.step)
    inside = _inside_mask(chart) & np.isfinite(derivative) & np.isfinite(q_eff)
    inside[[0, -1], :] = False
    if inside.any():
        b_dot = A0.extras.get("b_dot", _ray_velocity_component(chart, t.b))
        transport = 2 * derivative + (chart.Jp / chart.J - 2j * b_dot) * A1
        defect = 1j * transport + q_eff * values
        scale = max(float(np.nanmax(np.abs(q_eff[inside] * values[inside]))), 1e-12)
        residual = float(np.abs(defect[inside]).max()) / scale
    return AmplitudeField(chart, A1, residual, {"w": w, "q_eff": q_eff})


@dataclass
class WkbSolution:
    """Phase tube and transport amplitudes A₀ … A_N of a global probe."""

    tube: SemiGeodesicChart
    amplitudes: typing.Tuple[AmplitudeField, ...]

    @property
    def remainder_order(self) -> int:
        """The remainder is O(λ^{-remainder_order})."""
        return len(self.amplitudes)

    def phase(self, x: Array) -> Array:
        return self.tube.phase(x)

    def eikonal_residual(self) -> float:
        return self.tube.eikonal_residual()

    def transport_residual(self) -> float:
        return max(amplitude.residual for amplitude in self.amplitudes)


def wkb_solution(t: CoefficientTriple, chart: SemiGeodesicChart, order: int = 1) -> WkbSolution:
    if order not in (0, 1):
        msg = "Amplitude order must be 0 or 1, got %r."
        raise ProbeError(msg % order)
    amplitudes = [transport_A0(t, chart)]
    if order == 1:
        amplitudes.append(transport_A1(t, chart, amplitudes[0]))
    solution = WkbSolution(chart, tuple(amplitudes))
    residual = solution.transport_residual()
    if residual > TRANSPORT_TOLERANCE:
        logger.info("Transport residual %.3e above %.0e on the fan from %s.", residual, TRANSPORT_TOLERANCE, chart.z0)
    return solution


@dataclass
class GlobalCoefficients:
    """Exit-patch data per fan ray: Λf ≈ e^{iλ(t − ρ_x)}(λc₁ + c₀) on V."""

    angles: Array
    hits: Array
    exit_angle: Array
    entry_angle: Array
    rho_entry: Array
    rho_exit: Array
    c1: Array
    c0: Array
    A0: Array
    w: Array
    reflection: Array
    amplitude_floor: float

    def at(self, theta: float) -> typing.Dict[str, complex]:
        """Cubic interpolation of the per-ray data at fan angle ``theta``."""
        keys = ("c1", "c0", "w", "reflection", "A0", "rho_entry", "rho_exit", "exit_angle", "entry_angle")
        rows = np.flatnonzero(self.hits)
        out: typing.Dict[str, complex] = {}
        for key in keys:
            values = getattr(self, key)[rows]
            if key in ("exit_angle", "entry_angle"):
                values = np.unwrap(values)
            if np.iscomplexobj(values):
                out[key] = complex(
                    CubicSpline(self.angles[rows], values.real)(theta) + 1j * CubicSpline(self.angles[rows], values.imag)(theta)
                )
            else:
                out[key] = float(CubicSpline(self.angles[rows], values)(theta))
        return out


@np.errstate(divide="ignore", invalid="ignore")
def global_coefficients(t: CoefficientTriple, chart: SemiGeodesicChart) -> GlobalCoefficients:
    g, domain = t.g, chart.domain
    A0, A1 = wkb_solution(t, chart).amplitudes
    hits = chart.hits
    A0x = A0.at_exit()
    w_x = AmplitudeField(chart, A1.extras["w"], 0.0)._along(chart.rho_exit)

    y = chart.exit_point
    alpha = domain.angle_of(y)
    xi = chart.exit_covector
    rows = np.flatnonzero(hits)
    velocity = np.full_like(xi, np.nan)
    velocity[rows] = np.einsum("nij,nj->ni", g.inverse(y[rows]), xi[rows])
    nu = domain.conormal(g, alpha)
    dnu_phi = np.einsum("ni,ni->n", nu, velocity)
    tangent = domain.boundary_tangent(alpha)
    metric = np.full((len(alpha), 2, 2), np.nan)
    metric[rows] = g.eval(y[rows])
    h0 = np.einsum("ni,nij,nj->n", tangent, metric, tangent)
    unit_tangent = tangent / np.sqrt(h0)[:, None]
    dtau_phi = np.einsum("ni,ni->n", xi, unit_tangent)
    laplacian = chart.Jp_exit / chart.J_exit
    accel = np.full_like(xi, np.nan)
    accel[rows] = -domain.boundary_point(alpha[rows]) + np.einsum(
        "nlij,ni,nj->nl", christoffel(g, domain.boundary_point(alpha[rows])), tangent[rows], tangent[rows]
    )
    k = np.einsum("ni,ni->n", nu, accel) / h0
    mirrored = laplacian + 2 * k / dnu_phi
    b_tau = np.full(len(alpha), np.nan)
    b_tau[rows] = np.einsum("ni,ni->n", t.b.eval(y[rows]), unit_tangent[rows])

    arclength_rate = np.full(len(alpha), np.nan)
    dA0 = np.full(len(alpha), np.nan + 0j)
    if len(rows) >= 3:
        arclength_rate[rows] = np.sqrt(h0[rows]) * np.gradient(np.unwrap(alpha[rows]), chart.angles[rows])
        dA0[rows] = np.gradient(A0x[rows], chart.angles[rows])
    dtau_A0 = dA0 / arclength_rate
    reflection = (
        2j * b_tau * dtau_phi * A0x - 0.5 * (laplacian + mirrored) * A0x - 2 * dtau_phi * dtau_A0
    ) / dnu_phi
    c1 = -2j * dnu_phi * A0x
    c0 = c1 * w_x + reflection
    floor = float(np.nanmin(np.abs(A0x[rows]))) if len(rows) else 0.0
    logger.debug("Exit amplitude floor |A0| >= %.4g over %d rays.", floor, len(rows))
    return GlobalCoefficients(
        angles=chart.angles,
        hits=hits,
        exit_angle=alpha,
        entry_angle=chart.entry_angle,
        rho_entry=chart.rho_entry,
        rho_exit=chart.rho_exit,
        c1=c1,
        c0=c0,
        A0=A0x,
        w=w_x,
        reflection=reflection,
        amplitude_floor=floor,
    )


class GlobalSource:
    """Boundary source of a global probe, f = e^{iλ(t − ρ_e)}χ(t − t₀)χ(θ − θ₀) on U."""

    def __init__(self, probe: ProbeConfig, coefficients: GlobalCoefficients) -> None:
        self.probe = probe
        rows = np.flatnonzero(coefficients.hits)
        order = np.argsort(np.unwrap(coefficients.entry_angle[rows]))
        self.entry_angle = np.unwrap(coefficients.entry_angle[rows])[order]
        self.fan_angle = coefficients.angles[rows][order]
        self.rho_entry = coefficients.rho_entry[rows][order]

    def __call__(self, times: Array, angles: Array) -> Array:
        angles = np.asarray(angles, dtype=float)
        center = self.entry_angle[len(self.entry_angle) // 2]
        unwrapped = center + wrap_angle(angles - center)
        inside = (unwrapped >= self.entry_angle[0]) & (unwrapped <= self.entry_angle[-1])
        theta = np.interp(unwrapped, self.entry_angle, self.fan_angle)
        rho = np.interp(unwrapped, self.entry_angle, self.rho_entry)
        chi = probe_cutoff(times, theta - self.probe.theta0, self.probe.t0, self.probe.eps).value
        out = np.exp(1j * self.probe.lam * (np.asarray(times)[:, None] - rho[None, :])) * chi
        return np.where(inside[None, :], out, 0.0)


def global_probe_norm(probe: ProbeConfig, coefficients: GlobalCoefficients, chart: SemiGeodesicChart, n_times: int = 257) -> float:
    rows = np.flatnonzero(coefficients.hits)
    theta = coefficients.angles[rows]
    times = _time_grid(probe, n_times)
    chi = probe_cutoff(times, theta - probe.theta0, probe.t0, probe.eps)
    rho = coefficients.rho_entry[rows]
    e = np.exp(1j * probe.lam * (times[:, None] - rho[None, :]))
    z = chart.entry_point[rows]
    alpha = np.unwrap(coefficients.entry_angle[rows])
    tangent = chart.domain.boundary_tangent(alpha)
    speed = np.sqrt(np.einsum("ni,nij,nj->n", tangent, chart.g.eval(z), tangent)) * np.abs(np.gradient(alpha, theta))
    f = e * chi.value
    f_t = e * (1j * probe.lam * chi.value + chi.t)
    f_theta = e * (-1j * probe.lam * np.gradient(rho, theta)[None, :] * chi.value + chi.s)
    density = (np.abs(f) ** 2 + np.abs(f_t) ** 2 + np.abs(f_theta) ** 2 / speed**2) * speed
    dtheta = chart.d_angle
    dt = times[1] - times[0]
    return float(np.sqrt(np.sum(density) * dtheta * dt))


def _check_disjoint(coefficients: GlobalCoefficients, rows: Array) -> None:
    entry = np.unwrap(coefficients.entry_angle[rows])
    exit_ = np.unwrap(coefficients.exit_angle[rows])
    lo, hi = entry.min(), entry.max()
    distance = np.abs(wrap_angle(exit_[:, None] - np.linspace(lo, hi, 16)[None, :])).min()
    if distance <= 0.0 or (hi - lo) >= 2 * np.pi:
        msg = "Source patch U and exit patch V overlap."
        raise ProbeError(msg)


# Synthesis


def synth_dn(
    t: CoefficientTriple,
    probe: ProbeConfig,
    n_alpha: int = 256,
    n_times: int = 33,
    chart: typing.Optional[SemiGeodesicChart] = None,
    jet: typing.Optional[BoundaryJet] = None,
) -> DnRecord:
    """Asymptotic DN record of one probe; pass ``jet`` or ``chart`` to reuse them across probes."""
    probe.check()
    if probe.kind == "local":
        jet = jet if jet is not None else boundary_jet(t, n_alpha)
        times, angles, trace = local_trace(jet, probe, n_times=n_times)
        return DnRecord(
            times=times,
            angles=angles,
            trace=trace,
            probe=probe,
            source_norm=probe_norm(probe, jet),
            provenance="wkb",
            center_time=probe.t0,
            center_angle=float(np.mod(probe.x0, 2 * np.pi)),
            phase_reference=0.0,
            metric_id=getattr(t.g, "identifier", "metric"),
            column_phase=probe.omega * wrap_angle(angles - probe.x0),
        )
    chart = chart or solve_eikonal_global(t.g, probe.z0, b=t.b, domain=t.domain)
    coefficients = global_coefficients(t, chart)
    return global_record(t, probe, chart, coefficients, n_times)


def global_record(
    t: CoefficientTriple,
    probe: ProbeConfig,
    chart: SemiGeodesicChart,
    coefficients: GlobalCoefficients,
    n_times: int = 33,
) -> DnRecord:
    rows = np.flatnonzero(coefficients.hits & (np.abs(coefficients.angles - probe.theta0) <= probe.eps))
    if len(rows) < 3:
        msg = "Fan from %r has fewer than 3 rays through the probe patch."
        raise ProbeError(msg % (tuple(probe.z0),))
    _check_disjoint(coefficients, rows)
    center = coefficients.at(probe.theta0)
    delay = float(center["rho_exit"] - center["rho_entry"])
    center_time = probe.t0 + delay
    travel = coefficients.rho_exit[rows] - coefficients.rho_entry[rows]
    half = probe.eps + float(np.abs(travel - delay).max())
    times = np.linspace(center_time - half, center_time + half, n_times | 1)
    chi_t, _, _ = cutoff(np.abs(times[:, None] - probe.t0 - travel[None, :]) / probe.eps)
    chi_s, _, _ = cutoff(np.abs(coefficients.angles[rows] - probe.theta0) / probe.eps)
    amplitude = probe.lam * coefficients.c1[rows] + coefficients.c0[rows]
    trace = np.exp(1j * probe.lam * (times[:, None] - coefficients.rho_exit[rows][None, :])) * amplitude[None, :]
    trace = trace * chi_t * chi_s[None, :]
    order = np.argsort(np.unwrap(coefficients.exit_angle[rows]))
    return DnRecord(
        times=times,
        angles=np.mod(coefficients.exit_angle[rows][order], 2 * np.pi),
        trace=trace[:, order],
        probe=probe,
        source_norm=global_probe_norm(probe, coefficients, chart),
        provenance="wkb",
        center_time=center_time,
        center_angle=float(np.mod(center["exit_angle"], 2 * np.pi)),
        phase_reference=float(center["rho_exit"]),
        metric_id=getattr(t.g, "identifier", "metric"),
        column_phase=coefficients.rho_exit[rows][order],
    )


def moment_directions(radius: float = MOMENT_RADIUS) -> Array:
    """Tangential frequencies r·cos{0°, 60°, 120°} and 0, with the moment condition logged."""
    directions = np.append(radius * np.cos(np.deg2rad([0.0, 60.0, 120.0])), 0.0)
    moments = np.stack([np.ones_like(directions), directions, directions**2], axis=-1)
    logger.info("Direction moment matrix condition number %.3g.", np.linalg.cond(moments))
    return directions
