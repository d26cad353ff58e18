import logging
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from simpleray.exceptions import DomainError, ShootingError
from simpleray.fields import Array, CovectorField, MetricField
from simpleray.logging import TRACE_LOG_LEVEL
from simpleray.manifold import Domain, christoffel, gaussian_curvature, rotate_unit

logger = logging.getLogger("simpleray.error")

STEP_FRACTION = 1e-3
EXIT_BISECTIONS = 48
MAX_LENGTH_FACTOR = 10.0
NEWTON_ITERATIONS = 30
NEWTON_TOLERANCE = 1e-12
SHOOTING_ACCEPT = 1e-8
BETA_MARGIN = 1e-6

State = typing.Tuple[Array, ...]


def default_step(domain: Domain) -> float:
    return STEP_FRACTION * domain.diameter


def wrap_angle(angle: Array) -> Array:
    """Map to (−π, π]."""
    return np.pi - np.mod(np.pi - np.asarray(angle), 2 * np.pi)


@dataclass
class RayBundle:
    """
    Flat samples of a batch of rays ordered by (ray, t), plus per-ray exit data.
    Optional channels: ``jacobi`` (J, J′) and ``phase`` (∫ b(γ̇) dt).
    """

    ray: Array
    t: Array
    x: Array
    xi: Array
    exit_point: Array
    exit_covector: Array
    exit_time: Array
    converged: Array
    energy_drift: Array
    jacobi: typing.Optional[Array] = None
    jacobi_rate: typing.Optional[Array] = None
    phase: typing.Optional[Array] = None
    exit_jacobi: typing.Optional[Array] = None
    exit_phase: typing.Optional[Array] = None

    @property
    def n_rays(self) -> int:
        return len(self.exit_time)

    def offsets(self) -> Array:
        """``samples[offsets[k]:offsets[k+1]]`` belong to ray k."""
        counts = np.bincount(self.ray, minlength=self.n_rays)
        return np.concatenate([[0], np.cumsum(counts)])

    def regular(self, values: Array, step: float) -> Array:
        """
        Scatter samples taken at multiples of ``step`` onto a ``(ray, step index)``
        array padded with NaN. Exit samples off the step lattice are dropped.
        """
        index = np.rint(self.t / step).astype(int)
        on_grid = np.abs(self.t - index * step) < 1e-9 * step
        shape = (self.n_rays, int(index[on_grid].max()) + 1) + values.shape[1:]
        dtype = np.result_type(values.dtype, np.float64)
        out = np.full(shape, np.nan, dtype=dtype)
        out[self.ray[on_grid], index[on_grid]] = values[on_grid]
        return out


class RayIntegrator:
    """
    Batched RK4 integrator of the Hamiltonian flow of H = ½ g^{ij}ξ_iξ_j on the
    energy level ½. Rays stop at the first outward crossing of ``|x| = radius``
    after having been strictly inside, located by bisection of a partial step.
    Covectors are normalised once at the start; ``energy_drift`` is the largest
    |H − ½| met along each ray.
    """

    def __init__(
        self,
        g: MetricField,
        radius: float,
        step: float,
        max_length: float,
        jacobi: bool = False,
        covector: typing.Optional[CovectorField] = None,
    ) -> None:
        self.g = g
        self.radius = radius
        self.step = step
        self.max_length = max_length
        self.jacobi = jacobi
        self.covector = covector

    def derivatives(self, state: State) -> State:
        x, xi = state[0], state[1]
        metric = self.g.eval(x)
        dmetric = self.g.grad(x)
        velocity = np.linalg.solve(metric, xi[..., None])[..., 0]
        force = 0.5 * np.einsum("ni,nkij,nj->nk", velocity, dmetric, velocity)
        out: typing.List[Array] = [velocity, force]
        index = 2
        if self.jacobi:
            J, Jp = state[index], state[index + 1]
            curvature = gaussian_curvature(self.g, x)
            out += [Jp, -curvature * J]
            index += 2
        if self.covector is not None:
            out.append(np.einsum("ni,ni->n", self.covector.eval(x), velocity))
        return tuple(out)

    def advance(self, state: State, h: typing.Union[float, Array]) -> State:
        h = np.asarray(h, dtype=float)

        def scale(a: Array) -> Array:
            return h.reshape(h.shape + (1,) * (a.ndim - h.ndim)) * a if h.ndim else h * a

        def combine(base: State, slope: State, factor: float) -> State:
            return tuple(b + factor * scale(s) for b, s in zip(base, slope))

        k1 = self.derivatives(state)
        k2 = self.derivatives(combine(state, k1, 0.5))
        k3 = self.derivatives(combine(state, k2, 0.5))
        k4 = self.derivatives(combine(state, k3, 1.0))
        return tuple(
            s + scale(a + 2 * b + 2 * c + d) / 6.0
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )

    def normalise(self, x: Array, xi: Array) -> Array:
        """Rescale initial covectors onto H = ½."""
        twice_h = np.einsum("ni,nij,nj->n", xi, self.g.inverse(x), xi)
        return xi / np.sqrt(twice_h)[:, None]

    def energy_defect(self, x: Array, xi: Array) -> Array:
        """|H(x, ξ) − ½| of the unprojected flow."""
        return np.abs(0.5 * np.einsum("ni,nij,nj->n", xi, self.g.inverse(x), xi) - 0.5)

    def run(
        self,
        x0: Array,
        xi0: Array,
        stride: int = 1,
        inside_radius: typing.Optional[float] = None,
        expect_exit: bool = True,
    ) -> RayBundle:
        x0 = np.atleast_2d(np.asarray(x0, dtype=float))
        xi0 = np.atleast_2d(np.asarray(xi0, dtype=float))
        n = len(x0)
        h = self.step
        radius = self.radius
        entered_radius = radius if inside_radius is None else inside_radius

        state: typing.List[Array] = [x0.copy(), xi0.copy()]
        if self.jacobi:
            state += [np.zeros(n), np.ones(n)]
        if self.covector is not None:
            state.append(np.zeros(n))
        state[1] = self.normalise(state[0], state[1])
        drift = np.zeros(n)

        exit_point = np.full((n, 2), np.nan)
        exit_covector = np.full((n, 2), np.nan)
        exit_time = np.full(n, np.nan)
        exit_jacobi = np.full((n, 2), np.nan)
        exit_phase = np.full(n, np.nan)
        converged = np.zeros(n, dtype=bool)
        entered = np.linalg.norm(x0, axis=1) < entered_radius - 1e-12
        active = np.ones(n, dtype=bool)

        records: typing.List[typing.Tuple[Array, float, State]] = []
        all_rays = np.arange(n)
        records.append((all_rays, 0.0, tuple(s.copy() for s in state)))

        steps = 0
        max_steps = int(np.ceil(self.max_length / h))
        while active.any() and steps < max_steps:
            idx = np.flatnonzero(active)
            current = tuple(s[idx] for s in state)
            nxt = self.advance(current, h)
            steps += 1
            radial = np.linalg.norm(nxt[0], axis=1)
            was_inside = entered[idx] | (radial < entered_radius - 1e-12)
            leaving = was_inside & (radial >= radius)

            if leaving.any():
                sub = tuple(c[leaving] for c in current)
                fraction, final = self._locate_exit(sub, h)
                rays = idx[leaving]
                drift[rays] = np.maximum(drift[rays], self.energy_defect(final[0], final[1]))
                exit_point[rays] = final[0]
                exit_covector[rays] = final[1]
                exit_time[rays] = (steps - 1) * h + fraction
                if self.jacobi:
                    exit_jacobi[rays] = np.stack([final[2], final[3]], axis=1)
                if self.covector is not None:
                    exit_phase[rays] = final[-1]
                converged[rays] = True
                active[rays] = False
                records.append((rays, float("nan"), final))

            keep = ~leaving
            drift[idx[keep]] = np.maximum(drift[idx[keep]], self.energy_defect(nxt[0][keep], nxt[1][keep]))
            for s, value in zip(state, nxt):
                s[idx[keep]] = value[keep]
            entered[idx] = was_inside
            if steps % stride == 0 and keep.any():
                records.append(
                    (idx[keep], steps * h, tuple(v[keep].copy() for v in nxt))
                )
            if logger.isEnabledFor(TRACE_LOG_LEVEL) and steps % 500 == 0:
                logger.log(TRACE_LOG_LEVEL, "Step %d, %d rays active.", steps, int(active.sum()))

        if expect_exit and active.any():
            logger.info(
                "%d of %d rays did not exit within length %.3g.",
                int(active.sum()),
                n,
                self.max_length,
            )

        return self._assemble(records, exit_time, exit_point, exit_covector, converged, drift, exit_jacobi, exit_phase)

    def _locate_exit(self, state: State, h: float) -> typing.Tuple[Array, State]:
        lo = np.zeros(len(state[0]))
        hi = np.full(len(state[0]), h)
        for _ in range(EXIT_BISECTIONS):
            mid = 0.5 * (lo + hi)
            trial = self.advance(state, mid)
            inside = np.linalg.norm(trial[0], axis=1) < self.radius
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        fraction = 0.5 * (lo + hi)
        return fraction, self.advance(state, fraction)

    def _assemble(
        self,
        records: typing.List[typing.Tuple[Array, float, State]],
        exit_time: Array,
        exit_point: Array,
        exit_covector: Array,
        converged: Array,
        drift: Array,
        exit_jacobi: Array,
        exit_phase: Array,
    ) -> RayBundle:
        rays = np.concatenate([r for r, _, _ in records])
        times = np.concatenate(
            [
                exit_time[r] if np.isnan(t) else np.full(len(r), t)
                for r, t, _ in records
            ]
        )
        channels = [np.concatenate([s[k] for _, _, s in records]) for k in range(len(records[0][2]))]
        order = np.lexsort((times, rays))
        bundle = RayBundle(
            ray=rays[order],
            t=times[order],
            x=channels[0][order],
            xi=channels[1][order],
            exit_point=exit_point,
            exit_covector=exit_covector,
            exit_time=exit_time,
            converged=converged,
            energy_drift=drift,
        )
        index = 2
        if self.jacobi:
            bundle.jacobi = channels[index][order]
            bundle.jacobi_rate = channels[index + 1][order]
            bundle.exit_jacobi = exit_jacobi
            index += 2
        if self.covector is not None:
            bundle.phase = channels[index][order]
            bundle.exit_phase = exit_phase
        return bundle


@dataclass
class Geodesic:
    t: Array
    x: Array
    xi: Array
    entry_point: Array
    entry_covector: Array
    exit_point: Array
    exit_covector: Array
    exit_time: float
    converged: bool
    energy_drift: float

    def rows(self) -> typing.List[typing.Tuple[float, float, float, float, float]]:
        return [
            (float(t), float(x[0]), float(x[1]), float(xi[0]), float(xi[1]))
            for t, x, xi in zip(self.t, self.x, self.xi)
        ]


def _check_inflow(g: MetricField, z: Array, omega: Array, domain: Domain, radius: float) -> None:
    if abs(np.linalg.norm(z) - radius) > 1e-9:
        msg = "Start point %r is not on the circle of radius %.4g."
        raise DomainError(msg % (tuple(z), radius))
    ginv = g.inverse(z)
    unit = float(omega @ ginv @ omega)
    nu = z / np.linalg.norm(z)
    inward = float(omega @ ginv @ nu)
    if abs(unit - 1.0) > 1e-8 or inward >= 0:
        msg = "Covector %r is not a unit inflow covector at %r."
        raise DomainError(msg % (tuple(omega), tuple(z)))


def shoot(
    g: MetricField,
    z: typing.Sequence[float],
    omega: typing.Sequence[float],
    domain: typing.Optional[Domain] = None,
    surface: str = "boundary",
    step: typing.Optional[float] = None,
    max_length: typing.Optional[float] = None,
) -> Geodesic:
    domain = domain or Domain()
    radius = domain.boundary_radius if surface == "boundary" else domain.extended_radius
    z_ = np.asarray(z, dtype=float)
    omega_ = np.asarray(omega, dtype=float)
    _check_inflow(g, z_, omega_, domain, radius)
    integrator = RayIntegrator(
        g,
        radius,
        step or default_step(domain),
        max_length or MAX_LENGTH_FACTOR * 2 * radius,
    )
    bundle = integrator.run(z_[None], omega_[None])
    return Geodesic(
        t=bundle.t,
        x=bundle.x,
        xi=bundle.xi,
        entry_point=z_,
        entry_covector=omega_,
        exit_point=bundle.exit_point[0],
        exit_covector=bundle.exit_covector[0],
        exit_time=float(bundle.exit_time[0]),
        converged=bool(bundle.converged[0]),
        energy_drift=float(bundle.energy_drift[0]),
    )


# Inflow boundary


@dataclass
class InflowData:
    alpha: Array
    beta: Array
    points: Array
    covectors: Array
    vectors: Array
    weights: Array


@dataclass(frozen=True)
class InflowGrid:
    """
    Γ₋ sampled by boundary angle α (periodic) and inflow angle β measured from
    the inward normal, midpoints on (−π/2 + δ_β, π/2 − δ_β).
    """

    n_alpha: int = 96
    n_beta: int = 96
    delta_beta: float = 0.02
    radius: float = 1.0

    @property
    def d_alpha(self) -> float:
        return 2 * np.pi / self.n_alpha

    @property
    def d_beta(self) -> float:
        return (np.pi - 2 * self.delta_beta) / self.n_beta

    @property
    def alpha(self) -> Array:
        return self.d_alpha * np.arange(self.n_alpha)

    @property
    def beta(self) -> Array:
        return -np.pi / 2 + self.delta_beta + self.d_beta * (np.arange(self.n_beta) + 0.5)

    @property
    def shape(self) -> typing.Tuple[int, int]:
        return (self.n_alpha, self.n_beta)

    def domain(self) -> Domain:
        return Domain(boundary_radius=self.radius, extended_radius=max(1.15, self.radius * 1.15))

    def inflow_vectors(self, g: MetricField, alpha: Array, beta: Array) -> Array:
        domain = self.domain()
        normal = domain.inward_normal(g, alpha)
        z = domain.boundary_point(alpha)
        metric = g.eval(z)
        turned = rotate_unit(g, z, np.einsum("...ij,...j->...i", metric, normal))
        return np.cos(beta)[..., None] * normal + np.sin(beta)[..., None] * turned

    def initial_data(self, g: MetricField) -> InflowData:
        domain = self.domain()
        alpha, beta = np.meshgrid(self.alpha, self.beta, indexing="ij")
        points = domain.boundary_point(alpha)
        vectors = self.inflow_vectors(g, alpha, beta)
        metric = g.eval(points)
        covectors = np.einsum("...ij,...j->...i", metric, vectors)
        tangent = domain.boundary_tangent(alpha)
        speed = np.sqrt(np.einsum("...i,...ij,...j->...", tangent, metric, tangent))
        weights = np.cos(beta) * speed * self.d_alpha * self.d_beta
        return InflowData(alpha, beta, points, covectors, vectors, weights)

    def locate(self, g: MetricField, point: Array, vector: Array) -> typing.Tuple[Array, Array]:
        """(α, β) of inflow boundary data given an entry point and inward velocity."""
        domain = self.domain()
        alpha = domain.angle_of(point)
        normal = domain.inward_normal(g, alpha)
        z = domain.boundary_point(alpha)
        metric = g.eval(z)
        turned = rotate_unit(g, z, np.einsum("...ij,...j->...i", metric, normal))
        cos_b = np.einsum("...i,...ij,...j->...", vector, metric, normal)
        sin_b = np.einsum("...i,...ij,...j->...", vector, metric, turned)
        return alpha, np.arctan2(sin_b, cos_b)


def santalo_total(g: MetricField, grid: InflowGrid) -> float:
    return float(grid.initial_data(g).weights.sum())


# Boundary distance


def _fan_exit(
    g: MetricField,
    domain: Domain,
    alpha: Array,
    beta: Array,
    step: float,
) -> typing.Tuple[Array, Array, Array, Array]:
    """Exit angle, its β-derivative, length and convergence of inflow rays."""
    grid = InflowGrid(radius=domain.boundary_radius)
    points = domain.boundary_point(alpha)
    vectors = grid.inflow_vectors(g, alpha, beta)
    covectors = np.einsum("...ij,...j->...i", g.eval(points), vectors)
    integrator = RayIntegrator(
        g, domain.boundary_radius, step, MAX_LENGTH_FACTOR * domain.diameter, jacobi=True
    )
    bundle = integrator.run(points, covectors, stride=10**9)
    x = bundle.exit_point
    xi = bundle.exit_covector
    safe = np.where(np.isfinite(x), x, 1.0)
    safe_xi = np.where(np.isfinite(xi), xi, 1.0)
    velocity = np.einsum("nij,nj->ni", g.inverse(safe), safe_xi)
    turned = rotate_unit(g, safe, safe_xi)
    J = np.where(np.isfinite(bundle.exit_jacobi[:, 0]), bundle.exit_jacobi[:, 0], 0.0)
    along = np.einsum("ni,ni->n", safe, turned) / np.einsum("ni,ni->n", safe, velocity)
    dx = J[:, None] * (turned - velocity * along[:, None])
    rate = (safe[:, 0] * dx[:, 1] - safe[:, 1] * dx[:, 0]) / np.einsum("ni,ni->n", safe, safe)
    return domain.angle_of(safe), rate, bundle.exit_time, bundle.converged


def _initial_beta(alpha_x: Array, alpha_y: Array) -> Array:
    delta = np.mod(alpha_y - alpha_x, 2 * np.pi)
    return delta / 2.0 - np.pi / 2.0


@dataclass
class DistanceResult:
    lengths: Array
    residuals: Array
    beta: Array
    converged: Array = field(default_factory=lambda: np.zeros(0, dtype=bool))


def _solve_pairs(
    g: MetricField,
    alpha_x: Array,
    alpha_y: Array,
    domain: Domain,
    step: float,
) -> DistanceResult:
    alpha_x = np.asarray(alpha_x, dtype=float).ravel()
    alpha_y = np.asarray(alpha_y, dtype=float).ravel()
    beta = _initial_beta(alpha_x, alpha_y)
    lo, hi = -np.pi / 2 + BETA_MARGIN, np.pi / 2 - BETA_MARGIN
    residual = np.full(len(beta), np.inf)
    lengths = np.full(len(beta), np.nan)
    pending = np.ones(len(beta), dtype=bool)
    for iteration in range(NEWTON_ITERATIONS):
        idx = np.flatnonzero(pending)
        if not len(idx):
            break
        exit_angle, rate, length, ok = _fan_exit(g, domain, alpha_x[idx], beta[idx], step)
        mismatch = wrap_angle(exit_angle - alpha_y[idx])
        residual[idx] = np.where(ok, np.abs(mismatch), np.inf)
        lengths[idx] = length
        done = ok & (np.abs(mismatch) < NEWTON_TOLERANCE)
        pending[idx[done]] = False
        usable = ok & ~done & (np.abs(rate) > 1e-12)
        update = np.zeros(len(idx))
        update[usable] = mismatch[usable] / rate[usable]
        beta[idx] = np.clip(beta[idx] - update, lo, hi)
        stuck = ~ok | ~np.isfinite(update) | (~usable & ~done)
        pending[idx[stuck]] = False
        if logger.isEnabledFor(TRACE_LOG_LEVEL):
            logger.log(TRACE_LOG_LEVEL, "Newton iteration %d, %d pairs pending.", iteration, int(pending.sum()))

    for k in np.flatnonzero(residual > NEWTON_TOLERANCE):
        beta[k], residual[k], lengths[k] = _golden_fallback(g, domain, alpha_x[k], alpha_y[k], step)
    return DistanceResult(lengths, residual, beta, residual <= SHOOTING_ACCEPT)


def _golden_fallback(
    g: MetricField, domain: Domain, alpha_x: float, alpha_y: float, step: float
) -> typing.Tuple[float, float, float]:
    def mismatch(b: float) -> float:
        angle, _, _, ok = _fan_exit(g, domain, np.array([alpha_x]), np.array([b]), step)
        if not ok[0]:
            return np.pi
        return float(abs(wrap_angle(angle[0] - alpha_y)))

    lo, hi = -np.pi / 2 + BETA_MARGIN, np.pi / 2 - BETA_MARGIN
    result = minimize_scalar(mismatch, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    angle, _, length, ok = _fan_exit(g, domain, np.array([alpha_x]), np.array([result.x]), step)
    res = float(abs(wrap_angle(angle[0] - alpha_y))) if ok[0] else np.inf
    logger.info("Golden-section fallback for pair (%.4f, %.4f): residual %.2e.", alpha_x, alpha_y, res)
    return float(result.x), res, float(length[0])


def boundary_distance(
    g: MetricField,
    x: typing.Union[float, typing.Sequence[float]],
    y: typing.Union[float, typing.Sequence[float]],
    domain: typing.Optional[Domain] = None,
    step: typing.Optional[float] = None,
) -> float:
    """
    Length of the geodesic joining two boundary points, given either as angles
    or as points on ∂Ω.
    """
    domain = domain or Domain()
    ax = float(x) if np.ndim(x) == 0 else float(domain.angle_of(np.asarray(x)))
    ay = float(y) if np.ndim(y) == 0 else float(domain.angle_of(np.asarray(y)))
    if abs(wrap_angle(ax - ay)) < 1e-9:
        msg = "Boundary points coincide (angle %.6g)."
        raise DomainError(msg % ax)
    result = _solve_pairs(g, np.array([ax]), np.array([ay]), domain, step or default_step(domain))
    if not result.converged[0]:
        msg = "Shooting between angles %.6g and %.6g did not converge (residual %.3e)."
        raise ShootingError(msg % (ax, ay, result.residuals[0]), float(result.residuals[0]))
    return float(result.lengths[0])


def distance_table(
    g: MetricField,
    alpha_x: Array,
    alpha_y: Array,
    domain: typing.Optional[Domain] = None,
    step: typing.Optional[float] = None,
) -> DistanceResult:
    """Boundary distances for every pair ``(alpha_x[k], alpha_y[k])``."""
    domain = domain or Domain()
    shape = np.shape(alpha_x)
    result = _solve_pairs(g, alpha_x, alpha_y, domain, step or default_step(domain))
    failed = int((~result.converged).sum())
    if failed:
        logger.warning("%d of %d boundary pairs failed to converge.", failed, result.lengths.size)
    return DistanceResult(
        result.lengths.reshape(shape),
        result.residuals.reshape(shape),
        result.beta.reshape(shape),
        result.converged.reshape(shape),
    )


# Simplicity


@dataclass
class SimplicityReport:
    boundary_convexity_min: float
    min_jacobi: float
    is_simple: bool
    diverged_rays: int = 0
    convexity_threshold: float = 1e-3
    jacobi_threshold: float = 1e-3


def boundary_acceleration(g: MetricField, domain: Domain, alpha: Array) -> Array:
    """∇_τ τ for the coordinate tangent τ = dz/dα."""
    z = domain.boundary_point(alpha)
    tangent = domain.boundary_tangent(alpha)
    gamma = christoffel(g, z)
    return -z + np.einsum("...lij,...i,...j->...l", gamma, tangent, tangent)


def geodesic_curvature(g: MetricField, domain: Domain, alpha: Array) -> Array:
    """⟨∇_τ̂ τ̂, N⟩_g with N the inward unit normal; positive on strictly convex boundaries."""
    z = domain.boundary_point(alpha)
    tangent = domain.boundary_tangent(alpha)
    metric = g.eval(z)
    h0 = np.einsum("...i,...ij,...j->...", tangent, metric, tangent)
    nu = domain.conormal(g, alpha)
    return -np.einsum("...i,...i->...", boundary_acceleration(g, domain, alpha), nu) / h0


def simplicity_check(
    g: MetricField,
    domain: typing.Optional[Domain] = None,
    n_alpha: int = 32,
    n_beta: int = 31,
    t_min: float = 0.05,
    convexity_threshold: float = 1e-3,
    jacobi_threshold: float = 1e-3,
    step: typing.Optional[float] = None,
) -> SimplicityReport:
    domain = domain or Domain()
    samples = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    convexity = float(geodesic_curvature(g, domain, samples).min())

    grid = InflowGrid(n_alpha, n_beta, radius=domain.boundary_radius)
    data = grid.initial_data(g)
    integrator = RayIntegrator(
        g,
        domain.boundary_radius,
        step or default_step(domain),
        MAX_LENGTH_FACTOR * domain.diameter,
        jacobi=True,
    )
    bundle = integrator.run(data.points.reshape(-1, 2), data.covectors.reshape(-1, 2))
    late = bundle.t >= t_min
    ratio = bundle.jacobi[late] / bundle.t[late]
    min_jacobi = float(ratio.min()) if ratio.size else 0.0
    diverged = int((~bundle.converged).sum())
    is_simple = convexity > convexity_threshold and min_jacobi > jacobi_threshold and not diverged
    logger.info(
        "Simplicity of %s: convexity %.4g, Jacobi margin %.4g, %d diverged rays.",
        getattr(g, "identifier", "metric"),
        convexity,
        min_jacobi,
        diverged,
    )
    return SimplicityReport(
        convexity, min_jacobi, is_simple, diverged, convexity_threshold, jacobi_threshold
    )


# Flow continuity


def flow_continuity_gap(
    g: MetricField,
    g_tilde: MetricField,
    ray: typing.Tuple[typing.Sequence[float], typing.Sequence[float]],
    domain: typing.Optional[Domain] = None,
    step: typing.Optional[float] = None,
) -> float:
    """sup_t |x(t) − x̃(t)| + |ξ(t) − ξ̃(t)| over the common lifetime of both rays."""
    domain = domain or Domain()
    z = np.asarray(ray[0], dtype=float)[None]
    omega = np.asarray(ray[1], dtype=float)[None]
    h = step or default_step(domain)
    traces = []
    for metric in (g, g_tilde):
        integrator = RayIntegrator(metric, domain.boundary_radius, h, MAX_LENGTH_FACTOR * domain.diameter)
        bundle = integrator.run(z, omega)
        interior = bundle.t < bundle.exit_time[0]
        traces.append((bundle.x[interior], bundle.xi[interior]))
    n = min(len(traces[0][0]), len(traces[1][0]))
    dx = np.linalg.norm(traces[0][0][:n] - traces[1][0][:n], axis=1)
    dxi = np.linalg.norm(traces[0][1][:n] - traces[1][1][:n], axis=1)
    return float(np.max(dx + dxi))


@dataclass
class GronwallFit:
    constant: float
    rate: float
    ratios: Array
    nonincreasing: bool


def gronwall_fit(gaps: Array, perturbations: Array, slack: float = 0.05) -> GronwallFit:
    """
    Fit gap ≤ K·ε over a family of perturbation sizes ε. ``rate`` is the
    log-log slope of gap against ε, and ``nonincreasing`` checks that the
    ratio gap/ε does not grow as ε shrinks.
    """
    gaps = np.asarray(gaps, dtype=float)
    perturbations = np.asarray(perturbations, dtype=float)
    order = np.argsort(-perturbations)
    ratios = gaps[order] / perturbations[order]
    nonincreasing = bool(np.all(ratios[1:] <= ratios[:-1] * (1 + slack)))
    positive = gaps[order] > 0
    if positive.sum() >= 2:
        rate = float(np.polyfit(np.log(perturbations[order][positive]), np.log(gaps[order][positive]), 1)[0])
    else:
        rate = float("nan")
    return GronwallFit(float(ratios.max()), rate, ratios, nonincreasing)


def dump_csv(geodesic: Geodesic, path: str) -> None:
    from simpleray.formats import write_csv

    write_csv(path, ("t", "x", "y", "xi1", "xi2"), geodesic.rows())
