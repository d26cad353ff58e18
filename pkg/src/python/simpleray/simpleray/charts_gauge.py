"""
Boundary normal coordinates, the semi-geodesic fan from an exterior point,
and the gauge group acting on coefficient triples.
"""
import functools
import logging
import typing
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CloughTocher2DInterpolator, RectBivariateSpline
from scipy.spatial import Delaunay

from simpleray.exceptions import ChartError, DomainError
from simpleray.fields import (
    Array,
    CompactBump,
    CovectorField,
    CovectorFunction,
    CovectorSum,
    GradientCovector,
    GridCovectorField,
    GridMetric,
    GridScalarField,
    MetricField,
    ScalarField,
    ScalarFunction,
    VectorField,
    cutoff,
)
from simpleray.geodesics import RayIntegrator, default_step
from simpleray.manifold import (
    DOMAIN_TOLERANCE,
    CoefficientTriple,
    Domain,
    christoffel,
    gaussian_curvature,
    rotate_unit,
)

logger = logging.getLogger("simpleray.error")

COLLAPSE_RATIO = 0.05
MIN_VALID_DEPTH = 0.02
STANDARD_GRID = 161
NEWTON_STEPS = 30
PERIODIC_PAD = 4


def spectral_derivative(values: Array, axis: int = -1, order: int = 1, period: float = 2 * np.pi) -> Array:
    """Derivative of uniformly sampled periodic data along ``axis`` by FFT."""
    values = np.asarray(values)
    n = values.shape[axis]
    k = 2 * np.pi * np.fft.fftfreq(n, d=period / n)
    if n % 2 == 0 and order % 2 == 1:
        k[n // 2] = 0.0
    shape = [1] * values.ndim
    shape[axis] = n
    multiplier = ((1j * k) ** order).reshape(shape)
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * multiplier, axis=axis)
    return out.real if np.isrealobj(values) else out


# Boundary jets


@dataclass
class BoundaryJet:
    """
    Boundary values of a triple in boundary normal coordinates (α, r), sampled
    uniformly in the boundary angle α: the tangential metric h = g(∂_α, ∂_α)
    and its first two normal derivatives, the tangential covector b(∂_α), the
    gauge-invariant normal derivative db(N, ∂_α) and the potential.
    """

    alpha: Array
    h0: Array
    h1: Array
    h2: Array
    b0: Array
    b1: Array
    q0: Array
    curvature: Array
    residuals: typing.Dict[str, float] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.alpha)

    def replace(self, **changes: typing.Any) -> "BoundaryJet":
        return replace(self, **changes)


def boundary_jet(t: CoefficientTriple, n_alpha: int = 256) -> BoundaryJet:
    domain = t.domain
    alpha = 2 * np.pi * np.arange(n_alpha) / n_alpha
    z = domain.boundary_point(alpha)
    tangent = domain.boundary_tangent(alpha)
    metric = t.g.eval(z)
    h0 = np.einsum("ni,nij,nj->n", tangent, metric, tangent)
    nu = domain.conormal(t.g, alpha)
    normal = domain.inward_normal(t.g, alpha)
    acceleration = -z + np.einsum("nlij,ni,nj->nl", christoffel(t.g, z), tangent, tangent)
    h1 = 2.0 * np.einsum("ni,ni->n", nu, acceleration)
    curvature = gaussian_curvature(t.g, z)
    h2 = h1**2 / (2.0 * h0) - 2.0 * curvature * h0
    jac = t.b.jacobian(z)
    curl = jac - np.swapaxes(jac, -1, -2)
    return BoundaryJet(
        alpha=alpha,
        h0=h0,
        h1=h1,
        h2=h2,
        b0=np.einsum("ni,ni->n", t.b.eval(z), tangent),
        b1=np.einsum("nk,nkj,nj->n", normal, curl, tangent),
        q0=t.q.eval(z),
        curvature=curvature,
    )


# Boundary normal coordinates


def _periodic_spline(alpha: Array, r: Array, values: Array) -> RectBivariateSpline:
    pad = PERIODIC_PAD
    extended = np.concatenate([alpha[-pad:] - 2 * np.pi, alpha, alpha[:pad] + 2 * np.pi])
    stacked = np.concatenate([values[-pad:], values, values[:pad]], axis=0)
    return RectBivariateSpline(extended, r, stacked, kx=3, ky=3)


class BoundaryLayer:
    """
    Normal coordinates (α, r) around the whole boundary: X(α, r) is the point
    reached from z(α) along the unit-speed normal geodesic after g-length r,
    inward for r > 0 and outward (into Ω₁ \\ Ω) for r < 0.
    """

    def __init__(
        self,
        g: MetricField,
        domain: typing.Optional[Domain] = None,
        depth: float = 0.3,
        n_alpha: int = 192,
        n_depth: int = 60,
    ) -> None:
        self.g = g
        self.domain = domain = domain or Domain()
        self.depth = depth
        self.alpha = 2 * np.pi * np.arange(n_alpha) / n_alpha
        self.step = depth / n_depth
        n_out = max(3, int(np.ceil((domain.extended_radius - domain.boundary_radius) / self.step)))

        z = domain.boundary_point(self.alpha)
        nu = domain.conormal(g, self.alpha)
        inner_x, inner_v = self._normal_rays(z, -nu, n_depth)
        outer_x, outer_v = self._normal_rays(z, nu, n_out)
        self.r = self.step * np.arange(-n_out, n_depth + 1)
        self.origin = n_out
        self.points = np.concatenate([outer_x[:, :0:-1], inner_x], axis=1)
        self.normal = np.concatenate([-outer_v[:, :0:-1], inner_v], axis=1)
        self.tangent = spectral_derivative(self.points, axis=0)
        self.valid_depth = self._valid_depth()
        self._x = _periodic_spline(self.alpha, self.r, self.points[..., 0])
        self._y = _periodic_spline(self.alpha, self.r, self.points[..., 1])

    def _normal_rays(self, z: Array, covector: Array, steps: int) -> typing.Tuple[Array, Array]:
        integrator = RayIntegrator(self.g, 1e3, self.step, (steps - 0.5) * self.step)
        bundle = integrator.run(z, covector, expect_exit=False)
        n = len(z)
        x = bundle.x.reshape(n, steps + 1, 2)
        xi = bundle.xi.reshape(n, steps + 1, 2)
        velocity = np.einsum("...ij,...j->...i", self.g.inverse(x), xi)
        return x, velocity

    def _valid_depth(self) -> float:
        norms = np.linalg.norm(self.tangent[:, self.origin :], axis=-1)
        ratio = norms / norms[:, :1]
        collapsed = np.flatnonzero((ratio < COLLAPSE_RATIO).any(axis=0))
        valid = self.depth
        if len(collapsed):
            valid = min(valid, 0.9 * self.r[self.origin + collapsed[0]])
        if valid < MIN_VALID_DEPTH:
            msg = "Boundary chart collapses at depth %.4g (minimum %.4g)."
            raise ChartError(msg % (valid, MIN_VALID_DEPTH))
        return float(valid)

    def map(self, alpha: Array, r: Array) -> Array:
        a, rr = np.broadcast_arrays(np.mod(alpha, 2 * np.pi), np.asarray(r, dtype=float))
        shape = a.shape
        a, rr = a.ravel(), rr.ravel()
        out = np.stack([self._x.ev(a, rr), self._y.ev(a, rr)], axis=-1)
        return out.reshape(shape + (2,))

    def jacobian(self, alpha: Array, r: Array) -> Array:
        """``(..., i, c)`` with i the Cartesian component and c ∈ (α, r)."""
        a, rr = np.broadcast_arrays(np.mod(alpha, 2 * np.pi), np.asarray(r, dtype=float))
        shape = a.shape
        a, rr = a.ravel(), rr.ravel()
        rows = [
            np.stack([s.ev(a, rr, dx=1), s.ev(a, rr, dy=1)], axis=-1) for s in (self._x, self._y)
        ]
        return np.stack(rows, axis=-2).reshape(shape + (2, 2))

    def inverse(self, x: Array, tolerance: float = 1e-12) -> typing.Tuple[Array, Array, Array]:
        """(α, r, converged) with X(α, r) = x, by batched Newton iteration."""
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        flat = x.reshape(-1, 2)
        alpha = self.domain.angle_of(flat)
        speed = np.linalg.norm(self.map(alpha, 0.0 * alpha + self.step) - self.map(alpha, 0.0 * alpha), axis=-1)
        r = (self.domain.boundary_radius - np.linalg.norm(flat, axis=-1)) * self.step / speed
        r_min, r_max = self.r[0], self.r[-1]
        residual = np.full(len(flat), np.inf)
        for _ in range(NEWTON_STEPS):
            r = np.clip(r, r_min, r_max)
            mismatch = self.map(alpha, r) - flat
            residual = np.linalg.norm(mismatch, axis=-1)
            if np.all(residual < tolerance):
                break
            jac = self.jacobian(alpha, r)
            with np.errstate(invalid="ignore", divide="ignore"):
                delta = np.linalg.solve(jac, mismatch[..., None])[..., 0]
            delta = np.where(np.isfinite(delta), delta, 0.0)
            alpha = alpha - delta[:, 0]
            r = r - delta[:, 1]
        converged = (residual < max(tolerance, 1e-10)) & (r >= r_min) & (r <= r_max)
        return (
            np.mod(alpha, 2 * np.pi).reshape(shape),
            r.reshape(shape),
            converged.reshape(shape),
        )

    def chart_metric(self) -> Array:
        """G in (α, r) coordinates at the layer nodes, from exact ray velocities."""
        metric = self.g.eval(self.points)
        columns = np.stack([self.tangent, self.normal], axis=-1)
        return np.einsum("...ia,...ij,...jb->...ab", columns, metric, columns)

    def normality_residual(self) -> float:
        """max |G_rr − 1| and |G_αr|/√G_αα over nodes within the valid depth."""
        G = self.chart_metric()
        keep = self.r <= self.valid_depth
        G = G[:, keep]
        return float(
            max(
                np.abs(G[..., 1, 1] - 1.0).max(),
                (np.abs(G[..., 0, 1]) / np.sqrt(G[..., 0, 0])).max(),
            )
        )


class BoundaryNormalChart:
    """
    Boundary normal chart centred at a boundary point: x′ is the signed
    g-arclength along ∂Ω from the centre, xⁿ the normal distance.
    """

    def __init__(self, layer: BoundaryLayer, center: float) -> None:
        self.layer = layer
        self.center_angle = float(np.mod(center, 2 * np.pi))
        self.center = layer.domain.boundary_point(self.center_angle)
        dense = np.linspace(0.0, 2 * np.pi, 4097)
        tangent = layer.domain.boundary_tangent(dense)
        metric = layer.g.eval(layer.domain.boundary_point(dense))
        speed = np.sqrt(np.einsum("ni,nij,nj->n", tangent, metric, tangent))
        self._dense = dense
        self._arclength = cumulative_simpson(speed, x=dense, initial=0.0)
        self.length = float(self._arclength[-1])
        self._offset = float(np.interp(self.center_angle, dense, self._arclength))

    @property
    def valid_depth(self) -> float:
        return self.layer.valid_depth

    def alpha_of(self, x_tangential: Array) -> Array:
        s = np.mod(np.asarray(x_tangential, dtype=float) + self._offset, self.length)
        return np.interp(s, self._arclength, self._dense)

    def tangential_of(self, alpha: Array) -> Array:
        s = np.interp(np.mod(alpha, 2 * np.pi), self._dense, self._arclength) - self._offset
        return np.mod(s + 0.5 * self.length, self.length) - 0.5 * self.length

    def map(self, x_tangential: Array, x_normal: Array) -> Array:
        return self.layer.map(self.alpha_of(x_tangential), x_normal)

    def inverse(self, x: Array) -> typing.Tuple[Array, Array]:
        alpha, r, converged = self.layer.inverse(x)
        if not np.all(converged):
            msg = "Chart inversion failed for %d of %d points."
            raise ChartError(msg % (int((~converged).sum()), converged.size))
        return self.tangential_of(alpha), r


def build_boundary_chart(
    g: MetricField,
    x0: typing.Union[float, typing.Sequence[float]],
    domain: typing.Optional[Domain] = None,
    depth: float = 0.3,
    n_alpha: int = 192,
    n_depth: int = 60,
) -> BoundaryNormalChart:
    domain = domain or Domain()
    center = float(x0) if np.ndim(x0) == 0 else float(domain.angle_of(np.asarray(x0, dtype=float)))
    layer = BoundaryLayer(g, domain, depth, n_alpha, n_depth)
    logger.debug("Boundary layer for %s: valid depth %.4g.", getattr(g, "identifier", "metric"), layer.valid_depth)
    return BoundaryNormalChart(layer, center)


# Gauge elements


def _finite_jacobian(func: typing.Callable[[Array], Array], x: Array, step: float = 1e-6) -> Array:
    """Dφ as ``(..., i, k)`` = ∂φ^i/∂x^k."""
    columns = []
    for k in range(2):
        shift = np.zeros(2)
        shift[k] = step
        columns.append((func(x + shift) - func(x - shift)) / (2 * step))
    return np.stack(columns, axis=-1)


def _blend_weight(r: Array, radius: float) -> Array:
    weight, _, _ = cutoff(np.maximum(r, 0.0) / radius)
    return weight


class GaugeElement:
    """
    A pair (φ, θ) acting on triples by (g, b, q) ↦ (φ*g, φ*b − dθ, φ*q).
    ``diffeo`` is None for the identity map; ``jacobian`` returns ∂φ^i/∂x^k as
    ``(..., i, k)`` and falls back to central differences.
    """

    def __init__(
        self,
        diffeo: typing.Optional[typing.Callable[[Array], Array]] = None,
        theta: typing.Optional[ScalarField] = None,
        jacobian: typing.Optional[typing.Callable[[Array], Array]] = None,
        domain: typing.Optional[Domain] = None,
        name: str = "gauge",
    ) -> None:
        self.diffeo = diffeo
        self.theta = theta
        self._jacobian = jacobian
        self.domain = domain or Domain()
        self.name = name

    # Constructors

    @classmethod
    def identity(cls, domain: typing.Optional[Domain] = None) -> "GaugeElement":
        return cls(domain=domain, name="identity")

    @classmethod
    def from_theta(cls, theta: ScalarField, domain: typing.Optional[Domain] = None) -> "GaugeElement":
        return cls(theta=theta, domain=domain, name="theta")

    @classmethod
    def from_displacement(
        cls,
        displacement: VectorField,
        theta: typing.Optional[ScalarField] = None,
        domain: typing.Optional[Domain] = None,
        name: str = "displacement",
    ) -> "GaugeElement":
        def diffeo(x: Array) -> Array:
            return x + displacement.eval(x)

        def jacobian(x: Array) -> Array:
            return np.eye(2) + np.swapaxes(displacement.jacobian(x), -1, -2)

        return cls(diffeo, theta, jacobian, domain, name)

    @classmethod
    def random(
        cls, seed: int, amplitude: float = 0.02, domain: typing.Optional[Domain] = None
    ) -> "GaugeElement":
        """A small gauge supported inside |x| < 0.8."""
        rng = np.random.default_rng(seed)
        bumps = []
        for _ in range(3):
            radius = 0.35 * np.sqrt(rng.uniform())
            angle = rng.uniform(0, 2 * np.pi)
            center = (radius * np.cos(angle), radius * np.sin(angle))
            bumps.append((CompactBump(center, 0.4), amplitude * rng.normal(size=2)))
        theta_center = rng.uniform(-0.2, 0.2, size=2)
        theta = CompactBump(tuple(theta_center), 0.5, amplitude * rng.normal())

        def diffeo(x: Array) -> Array:
            return x + sum(b.eval(x)[..., None] * d for b, d in bumps)

        def jacobian(x: Array) -> Array:
            return np.eye(2) + sum(d[:, None] * b.grad(x)[..., None, :] for b, d in bumps)

        return cls(diffeo, theta, jacobian, domain, "random:%d" % seed)

    @classmethod
    def boundary_layer(
        cls,
        seed: int,
        amplitude: float = 0.01,
        width: float = 0.2,
        domain: typing.Optional[Domain] = None,
    ) -> "GaugeElement":
        """A small gauge supported in a collar of ∂Ω, fixing ∂Ω pointwise."""
        domain = domain or Domain()
        rng = np.random.default_rng(seed)
        direction = rng.normal(size=2)
        mode = int(rng.integers(1, 4))
        shift = rng.uniform(0, 2 * np.pi)
        theta_scale = rng.normal()
        R = domain.boundary_radius

        def profile(x: Array) -> Array:
            r = np.linalg.norm(x, axis=-1)
            collar = np.clip(1.0 - ((r - R) / width) ** 2, 0.0, None) ** 4
            modulation = 1.0 + 0.5 * np.cos(mode * np.arctan2(x[..., 1], x[..., 0]) + shift)
            return amplitude * (R**2 - r**2) * collar * modulation

        def diffeo(x: Array) -> Array:
            return x + profile(x)[..., None] * direction

        theta = ScalarFunction(lambda x: theta_scale * profile(x), bound=abs(theta_scale) * amplitude)
        return cls(diffeo, theta, None, domain, "collar:%d" % seed)

    # Evaluation

    @property
    def is_identity_map(self) -> bool:
        return self.diffeo is None

    def map(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return x if self.diffeo is None else self.diffeo(x)

    def jacobian(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        if self.diffeo is None:
            return np.broadcast_to(np.eye(2), x.shape + (2,)).copy()
        if self._jacobian is not None:
            return self._jacobian(x)
        return _finite_jacobian(self.diffeo, x)

    def theta_value(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1]) if self.theta is None else self.theta.eval(x)

    def boundary_defect(self, n: int = 256) -> typing.Tuple[float, float]:
        """(max |φ(z) − z|, max |θ(z)|) over boundary samples."""
        z = self.domain.boundary_point(2 * np.pi * np.arange(n) / n)
        return (
            float(np.abs(self.map(z) - z).max()),
            float(np.abs(self.theta_value(z)).max()),
        )

    # Group structure

    def compose(self, other: "GaugeElement") -> "GaugeElement":
        """
        The element acting as ``act(self, act(other, t))``: its map is
        other.φ ∘ self.φ and its gauge function θ_other ∘ self.φ + θ_self.
        """
        if self.is_identity_map and other.is_identity_map:
            diffeo = None
            jacobian = None
        else:

            def diffeo(x: Array) -> Array:
                return other.map(self.map(x))

            def jacobian(x: Array) -> Array:
                return np.einsum("...ij,...jk->...ik", other.jacobian(self.map(x)), self.jacobian(x))

        if self.theta is None and other.theta is None:
            theta = None
        else:
            theta = ScalarFunction(lambda x: other.theta_value(self.map(x)) + self.theta_value(x))
        return GaugeElement(diffeo, theta, jacobian, self.domain, "%s*%s" % (self.name, other.name))

    def inverse(self) -> "GaugeElement":
        if self.is_identity_map:
            theta = None if self.theta is None else ScalarFunction(lambda x: -self.theta_value(x))
            return GaugeElement(None, theta, None, self.domain, "inverse(%s)" % self.name)

        def diffeo(x: Array) -> Array:
            return invert_map(self.map, self.jacobian, x)

        def jacobian(x: Array) -> Array:
            return np.linalg.inv(self.jacobian(diffeo(x)))

        theta = None
        if self.theta is not None:
            theta = ScalarFunction(lambda x: -self.theta_value(diffeo(x)))
        return GaugeElement(diffeo, theta, jacobian, self.domain, "inverse(%s)" % self.name)

    def to_grid(self, n: int = STANDARD_GRID) -> typing.Tuple[Array, typing.Tuple[float, float, float, float]]:
        """Components (φ_x, φ_y, θ) on the standard grid."""
        points, bbox = standard_points(self.domain, n)
        values = np.concatenate([self.map(points), self.theta_value(points)[..., None]], axis=-1)
        return values, bbox


def invert_map(
    func: typing.Callable[[Array], Array],
    jacobian: typing.Callable[[Array], Array],
    x: Array,
    tolerance: float = 1e-13,
) -> Array:
    x = np.asarray(x, dtype=float)
    y = x.copy()
    residual = np.inf
    for _ in range(NEWTON_STEPS):
        mismatch = func(y) - x
        residual = float(np.abs(mismatch).max()) if mismatch.size else 0.0
        if residual < tolerance:
            return y
        y = y - np.linalg.solve(jacobian(y), mismatch[..., None])[..., 0]
    if residual > 1e-9:
        msg = "Inverse map did not converge (residual %.3e)."
        raise ChartError(msg % residual)
    return y


def standard_points(
    domain: Domain, n: int = STANDARD_GRID
) -> typing.Tuple[Array, typing.Tuple[float, float, float, float]]:
    """The ``n × n`` grid over ``[−R₁, R₁]²`` indexed ``[iy, ix]``."""
    radius = domain.extended_radius
    axis = np.linspace(-radius, radius, n)
    xx, yy = np.meshgrid(axis, axis)
    return np.stack([xx, yy], axis=-1), (-radius, radius, -radius, radius)


def act(gauge: GaugeElement, t: CoefficientTriple, n: int = STANDARD_GRID) -> CoefficientTriple:
    """(φ*g, φ*b − dθ, φ*q), resampled on the standard grid unless φ is the identity."""
    name = "%s@%s" % (gauge.name, t.name)
    if gauge.is_identity_map:
        if gauge.theta is None:
            return t
        b = CovectorSum([t.b, GradientCovector(gauge.theta)], [1.0, -1.0])
        return t.replace(b=b, name=name)

    points, bbox = standard_points(t.domain, n)
    moved = gauge.map(points)
    jac = gauge.jacobian(points)
    det = np.linalg.det(jac)
    if np.any(det <= 0) or not np.all(np.isfinite(det)):
        msg = "Gauge map has a non-invertible jacobian (min det %.3e)."
        raise ChartError(msg % float(np.nanmin(det)))
    metric = np.einsum("...ia,...ij,...jb->...ab", jac, t.g.eval(moved), jac)
    covector = np.einsum("...ia,...i->...a", jac, t.b.eval(moved))
    if gauge.theta is not None:
        covector = covector - gauge.theta.grad(points)
    potential = t.q.eval(moved)
    return t.replace(
        g=GridMetric(metric, bbox, identifier="%s*%s" % (gauge.name, getattr(t.g, "identifier", "g"))),
        b=GridCovectorField(covector, bbox),
        q=GridScalarField(potential, bbox),
        name=name,
    )


def build_phi(
    g: MetricField,
    g_tilde: MetricField,
    domain: typing.Optional[Domain] = None,
    depth: float = 0.3,
    layers: typing.Optional[typing.Tuple[BoundaryLayer, BoundaryLayer]] = None,
) -> GaugeElement:
    """
    The boundary-fixing map sending g̃-normal geodesics to g-normal geodesics
    near ∂Ω, blended to the identity at half the common valid depth.
    """
    domain = domain or Domain()
    if g_tilde is g:
        return GaugeElement.identity(domain)
    layer, layer_tilde = layers or (
        BoundaryLayer(g, domain, depth),
        BoundaryLayer(g_tilde, domain, depth),
    )
    blend = 0.5 * min(layer.valid_depth, layer_tilde.valid_depth)

    def diffeo(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        alpha, r, converged = layer_tilde.inverse(x)
        near = converged & (r < blend)
        weight = np.where(near, _blend_weight(r, blend), 0.0)
        target = layer.map(alpha, np.where(near, r, 0.0))
        return x + weight[..., None] * (target - x)

    return GaugeElement(diffeo, None, None, domain, "phi")


def _normal_component(b: CovectorField, layer: BoundaryLayer) -> Array:
    return np.einsum("...i,...i->...", b.eval(layer.points), layer.normal)


def build_theta(
    b: CovectorField,
    b_tilde: CovectorField,
    chart: typing.Union[BoundaryLayer, BoundaryNormalChart],
) -> ScalarField:
    """
    θ(α, r) = ∫₀^r (b̃_n − b_n)(α, s) ds along normal geodesics, multiplied by
    a cutoff in r that vanishes from half the valid depth on.
    """
    layer = chart.layer if isinstance(chart, BoundaryNormalChart) else chart
    difference = _normal_component(b_tilde, layer) - _normal_component(b, layer)
    o = layer.origin
    inner = cumulative_simpson(difference[:, o:], dx=layer.step, axis=1, initial=0.0)
    outer = -cumulative_simpson(difference[:, o::-1], dx=layer.step, axis=1, initial=0.0)
    values = np.concatenate([outer[:, :0:-1], inner], axis=1)
    spline = _periodic_spline(layer.alpha, layer.r, values)
    blend = 0.5 * layer.valid_depth

    def theta(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        alpha, r, converged = layer.inverse(x)
        near = converged & (r < blend)
        a = np.where(near, alpha, 0.0).ravel()
        rr = np.where(near, r, 0.0).ravel()
        value = spline.ev(a, rr).reshape(alpha.shape)
        return np.where(near, _blend_weight(r, blend) * value, 0.0)

    return ScalarFunction(theta, bound=float(np.abs(values).max()))


def pullback_covector(gauge: GaugeElement, b: CovectorField) -> CovectorField:
    def value(x: Array) -> Array:
        return np.einsum("...ia,...i->...a", gauge.jacobian(x), b.eval(gauge.map(x)))

    return CovectorFunction(value, bound=b.bound)


def alignment_gauge(
    t: CoefficientTriple, t_tilde: CoefficientTriple, depth: float = 0.3
) -> GaugeElement:
    """
    Gauge for ``t_tilde`` after which its normal geodesics and the normal
    component of its covector agree with those of ``t`` near ∂Ω.
    """
    layer = BoundaryLayer(t.g, t.domain, depth)
    layer_tilde = BoundaryLayer(t_tilde.g, t.domain, depth)
    phi = build_phi(t_tilde.g, t.g, t.domain, depth, layers=(layer_tilde, layer))
    theta = build_theta(t.b, pullback_covector(phi, t_tilde.b), layer)
    return GaugeElement(phi.diffeo, theta, None, t.domain, "align")


# Semi-geodesic coordinates from an exterior point


def _lagrange4(values: Array, k: Array, s: Array) -> Array:
    """Cubic interpolation at index ``k − 1 + s`` from nodes k−2 … k+1 of each row."""
    n = values.shape[1]
    rows = np.arange(values.shape[0])
    index = [np.clip(k + d, 0, n - 1) for d in (-2, -1, 0, 1)]
    weights = [
        -s * (s - 1) * (s - 2) / 6.0,
        (s + 1) * (s - 1) * (s - 2) / 2.0,
        -(s + 1) * s * (s - 2) / 2.0,
        (s + 1) * s * (s - 1) / 6.0,
    ]
    extra = (slice(None),) + (None,) * (values.ndim - 2)
    return sum(w[extra] * values[rows, i] for w, i in zip(weights, index))


class SemiGeodesicChart:
    """
    Fan of unit-speed geodesics from z₀ ∈ Ω₁ \\ Ω̄ sampled on a regular
    (fan angle, distance) lattice, with Jacobi fields and the magnetic phase
    ∫b along each ray. ``phase`` interpolates the distance to z₀.
    """

    def __init__(
        self,
        g: MetricField,
        z0: typing.Sequence[float],
        b: typing.Optional[CovectorField] = None,
        domain: typing.Optional[Domain] = None,
        n_rays: int = 257,
        spread: typing.Optional[float] = None,
        step: typing.Optional[float] = None,
        min_distance: float = 0.02,
    ) -> None:
        self.domain = domain = domain or Domain()
        self.g = g
        self.b = b
        self.z0 = z0_ = np.asarray(z0, dtype=float)
        radius = float(np.linalg.norm(z0_))
        if not domain.boundary_radius + min_distance <= radius <= domain.extended_radius + DOMAIN_TOLERANCE:
            msg = "Source point at radius %.4g is not in the exterior collar (%.4g, %.4g]."
            raise DomainError(msg % (radius, domain.boundary_radius + min_distance, domain.extended_radius))
        self.step = step or default_step(domain)
        metric = g.eval(z0_)
        toward = -z0_ / radius
        e1 = toward / np.sqrt(toward @ metric @ toward)
        e2 = rotate_unit(g, z0_, metric @ e1)
        if spread is None:
            spread = min(1.1 * np.arcsin(domain.boundary_radius / radius), 0.5 * np.pi - 1e-3)
        self.angles = np.linspace(-spread, spread, n_rays)
        self.d_angle = float(self.angles[1] - self.angles[0])
        velocity = np.cos(self.angles)[:, None] * e1 + np.sin(self.angles)[:, None] * e2
        integrator = RayIntegrator(
            g,
            domain.extended_radius,
            self.step,
            20.0 * domain.extended_radius,
            jacobi=True,
            covector=b,
        )
        points = np.broadcast_to(z0_, velocity.shape)
        bundle = integrator.run(points, velocity @ metric.T, inside_radius=domain.extended_radius + 1e-9)
        self.x = bundle.regular(bundle.x, self.step)
        self.xi = bundle.regular(bundle.xi, self.step)
        self.J = bundle.regular(bundle.jacobi, self.step)
        self.Jp = bundle.regular(bundle.jacobi_rate, self.step)
        if bundle.phase is not None:
            self.magnetic = bundle.regular(bundle.phase, self.step)
        else:
            self.magnetic = np.where(np.isfinite(self.J), 0.0, np.nan)
        self.rho = self.step * np.arange(self.x.shape[1])
        self._crossings()

    def _crossing(self, k: Array, entering: bool) -> Array:
        """Fraction s ∈ [0, 1] of the step from k−1 to k where |x| = R."""
        rows = np.arange(len(k))
        x0, x1 = self.x[rows, k - 1], self.x[rows, k]
        ginv0 = self.g.inverse(x0)
        ginv1 = self.g.inverse(x1)
        v0 = self.step * np.einsum("nij,nj->ni", ginv0, self.xi[rows, k - 1])
        v1 = self.step * np.einsum("nij,nj->ni", ginv1, self.xi[rows, k])
        R2 = self.domain.boundary_radius**2
        lo = np.zeros(len(k))
        hi = np.ones(len(k))
        for _ in range(60):
            s = 0.5 * (lo + hi)
            h00 = 2 * s**3 - 3 * s**2 + 1
            h10 = s**3 - 2 * s**2 + s
            h01 = -2 * s**3 + 3 * s**2
            h11 = s**3 - s**2
            p = h00[:, None] * x0 + h10[:, None] * v0 + h01[:, None] * x1 + h11[:, None] * v1
            outside = np.einsum("ni,ni->n", p, p) > R2
            before = outside if entering else ~outside
            lo = np.where(before, s, lo)
            hi = np.where(before, hi, s)
        return 0.5 * (lo + hi)

    def _crossings(self) -> None:
        radial = np.linalg.norm(self.x, axis=-1)
        inside = radial < self.domain.boundary_radius
        hits = inside.any(axis=1)
        entry = np.where(hits, np.argmax(inside, axis=1), 1)
        after = np.where(np.arange(radial.shape[1])[None, :] > entry[:, None], ~inside & np.isfinite(radial), False)
        hits &= after.any(axis=1)
        leave = np.where(hits, np.argmax(after, axis=1), 2)
        entry = np.maximum(entry, 1)
        s_in = self._crossing(entry, entering=True)
        s_out = self._crossing(leave, entering=False)
        self.hits = hits
        self.rho_entry = np.where(hits, (entry - 1 + s_in) * self.step, np.nan)
        self.rho_exit = np.where(hits, (leave - 1 + s_out) * self.step, np.nan)
        self.entry_point = _lagrange4(self.x, entry, s_in)
        self.exit_point = _lagrange4(self.x, leave, s_out)
        self.entry_covector = _lagrange4(self.xi, entry, s_in)
        self.exit_covector = _lagrange4(self.xi, leave, s_out)
        self.J_entry = _lagrange4(self.J, entry, s_in)
        self.J_exit = _lagrange4(self.J, leave, s_out)
        self.Jp_exit = _lagrange4(self.Jp, leave, s_out)
        self.magnetic_entry = _lagrange4(self.magnetic, entry, s_in)
        self.magnetic_exit = _lagrange4(self.magnetic, leave, s_out)
        logger.debug("Fan from %r: %d of %d rays hit the domain.", tuple(self.z0), int(hits.sum()), len(hits))

    @property
    def exit_angle(self) -> Array:
        return self.domain.angle_of(self.exit_point)

    @property
    def entry_angle(self) -> Array:
        return self.domain.angle_of(self.entry_point)

    def curvature(self) -> Array:
        out = np.full(self.J.shape, np.nan)
        finite = np.isfinite(self.x[..., 0])
        out[finite] = gaussian_curvature(self.g, self.x[finite])
        return out

    @functools.cached_property
    def _triangulation(self) -> typing.Tuple[Delaunay, Array]:
        finite = np.isfinite(self.x[..., 0])
        finite[:, 1::2] &= False
        finite[:, 0] = False
        points = self.x[finite]
        return Delaunay(points), finite

    def phase(self, x: Array) -> Array:
        """dist_g(x, z₀) by Clough–Tocher interpolation of the fan samples."""
        tri, finite = self._triangulation
        rho = np.broadcast_to(self.rho, self.J.shape)[finite]
        return CloughTocher2DInterpolator(tri, rho)(np.asarray(x, dtype=float))

    def fan_angle(self, x: Array) -> Array:
        tri, finite = self._triangulation
        angle = np.broadcast_to(self.angles[:, None], self.J.shape)[finite]
        return CloughTocher2DInterpolator(tri, angle)(np.asarray(x, dtype=float))

    def eikonal_residual(self) -> float:
        """max |g^{ij}∂_iφ∂_jφ − 1| over the samples, with dφ = ξ along the rays."""
        finite = np.isfinite(self.x[..., 0])
        xi = self.xi[finite]
        ginv = self.g.inverse(self.x[finite])
        return float(np.abs(np.einsum("ni,nij,nj->n", xi, ginv, xi) - 1.0).max())
