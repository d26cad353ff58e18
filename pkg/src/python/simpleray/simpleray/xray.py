"""
Geodesic X-ray transforms of functions, one-forms and symmetric 2-tensors,
their adjoint, the solenoidal decomposition and iterative inversion.
"""
import logging
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import LinearOperator, cg

from simpleray.exceptions import ConvergenceError
from simpleray.fields import (
    Array,
    GridCovectorField,
    GridScalarField,
    GridTensorField,
    MetricField,
    TensorField2,
    TensorFunction,
    VectorField,
)
from simpleray.geodesics import InflowGrid, RayBundle, RayIntegrator, default_step
from simpleray.manifold import CartesianGrid, christoffel

logger = logging.getLogger("simpleray.error")

CG_RTOL = 1e-6
CG_MAXITER = 200
PROJECTION_RTOL = 1e-10
PROJECTION_MAXITER = 5000
MIN_ADJOINT_SAMPLES = 64
COMPONENTS = {0: 1, 1: 2, 2: 3}

FieldLike = typing.Any


@dataclass
class Sinogram:
    grid: InflowGrid
    values: Array
    tensor_order: int
    metric_id: str
    valid: Array
    weights: Array

    def norm(self) -> float:
        """L²(Γ₋, dμ) over valid nodes."""
        return float(np.sqrt(np.sum(np.where(self.valid, self.values**2 * self.weights, 0.0))))

    def inner(self, other: typing.Union["Sinogram", Array]) -> float:
        values = other.values if isinstance(other, Sinogram) else np.asarray(other)
        return float(np.sum(np.where(self.valid, self.values * values * self.weights, 0.0)))

    def replace_values(self, values: Array) -> "Sinogram":
        return Sinogram(self.grid, np.asarray(values, dtype=float), self.tensor_order, self.metric_id, self.valid, self.weights)


def simpson_weights(n_uniform: int, h: float, tail: float) -> Array:
    """
    Quadrature weights for samples at 0, h, …, (n_uniform − 1)h followed by a
    final sample ``tail`` past the last one.
    """
    intervals = n_uniform - 1
    weights = np.zeros(n_uniform + 1)
    if intervals == 0:
        weights[:] = 0.5 * tail
        return weights
    if intervals == 1:
        weights[:2] += 0.5 * h
    else:
        paired = intervals - intervals % 2
        weights[0 : paired + 1 : 2] += 2 * h / 3
        weights[1:paired:2] += 4 * h / 3
        weights[0] -= h / 3
        weights[paired] -= h / 3
        if intervals % 2:
            weights[intervals] += 5 * h / 12
            weights[intervals - 1] += 8 * h / 12
            weights[intervals - 2] -= h / 12
    h0, h1 = h, tail
    weights[n_uniform] += (2 * h1**2 + 3 * h0 * h1) / (6 * (h0 + h1))
    weights[n_uniform - 1] += (h1**2 + 3 * h0 * h1) / (6 * h0)
    weights[n_uniform - 2] -= h1**3 / (6 * h0 * (h0 + h1))
    return weights


@dataclass
class RayTable:
    """One batched trace of every Γ₋ node, with per-sample quadrature weights."""

    grid: InflowGrid
    metric_id: str
    ray: Array
    points: Array
    velocities: Array
    weights: Array
    valid: Array
    node_weights: Array
    exit_time: Array

    @classmethod
    def trace(
        cls,
        g: MetricField,
        grid: InflowGrid,
        step: typing.Optional[float] = None,
        stride: int = 2,
    ) -> "RayTable":
        domain = grid.domain()
        h = step or default_step(domain)
        data = grid.initial_data(g)
        integrator = RayIntegrator(g, grid.radius, h, 20.0 * domain.diameter)
        bundle = integrator.run(data.points.reshape(-1, 2), data.covectors.reshape(-1, 2), stride=stride)
        weights = cls._weights(bundle, h * stride)
        velocities = np.einsum("nij,nj->ni", g.inverse(bundle.x), bundle.xi)
        valid = bundle.converged & np.isfinite(bundle.exit_time)
        if not valid.all():
            logger.warning("%d of %d rays flagged as diverged.", int((~valid).sum()), len(valid))
        return cls(
            grid=grid,
            metric_id=getattr(g, "identifier", "metric"),
            ray=bundle.ray,
            points=bundle.x,
            velocities=velocities,
            weights=weights,
            valid=valid.reshape(grid.shape),
            node_weights=data.weights,
            exit_time=bundle.exit_time.reshape(grid.shape),
        )

    @staticmethod
    def _weights(bundle: RayBundle, spacing: float) -> Array:
        offsets = bundle.offsets()
        weights = np.zeros(len(bundle.t))
        for k in range(bundle.n_rays):
            lo, hi = offsets[k], offsets[k + 1]
            if not bundle.converged[k]:
                continue
            n_uniform = hi - lo - 1
            tail = bundle.t[hi - 1] - bundle.t[hi - 2]
            weights[lo:hi] = simpson_weights(n_uniform, spacing, tail)
        return weights

    def sum_per_ray(self, integrand: Array) -> Array:
        values = np.bincount(self.ray, weights=integrand * self.weights, minlength=self.valid.size)
        return np.where(self.valid.ravel(), values, 0.0).reshape(self.grid.shape)


def contraction(velocities: Array, order: int) -> Array:
    """Coefficients of the packed components against ẋ⊗…⊗ẋ, ``(n, components)``."""
    if order == 0:
        return np.ones((len(velocities), 1))
    vx, vy = velocities[:, 0], velocities[:, 1]
    if order == 1:
        return np.stack([vx, vy], axis=-1)
    return np.stack([vx * vx, 2 * vx * vy, vy * vy], axis=-1)


def pack(values: Array, order: int) -> Array:
    """Field values to packed components: (f), (b_x, b_y) or (f_xx, f_xy, f_yy)."""
    values = np.asarray(values, dtype=float)
    if order == 0:
        return values[..., None]
    if order == 1:
        return values
    return np.stack([values[..., 0, 0], values[..., 0, 1], values[..., 1, 1]], axis=-1)


def unpack(values: Array, order: int) -> Array:
    if order == 0:
        return values[..., 0]
    if order == 1:
        return values
    xx, xy, yy = values[..., 0], values[..., 1], values[..., 2]
    return np.stack([np.stack([xx, xy], axis=-1), np.stack([xy, yy], axis=-1)], axis=-2)


def xray(
    g: MetricField,
    f: FieldLike,
    grid: InflowGrid,
    table: typing.Optional[RayTable] = None,
    order: typing.Optional[int] = None,
) -> Sinogram:
    """Simpson quadrature of f contracted with the unit velocity along each Γ₋ ray."""
    order = getattr(f, "order", 0) if order is None else order
    table = table or RayTable.trace(g, grid)
    values = pack(f.eval(table.points), order)
    integrand = np.einsum("nc,nc->n", values, contraction(table.velocities, order))
    return Sinogram(
        grid=grid,
        values=table.sum_per_ray(integrand),
        tensor_order=order,
        metric_id=table.metric_id,
        valid=table.valid,
        weights=table.node_weights,
    )


def sym_diff(g: MetricField, v: VectorField) -> TensorField2:
    """(dˢv)_ij = ½(∇_i v_j + ∇_j v_i) with v_j = g_jk v^k."""

    def value(x: Array) -> Array:
        metric = g.eval(x)
        vec = v.eval(x)
        lowered = np.einsum("...jk,...k->...j", metric, vec)
        dlowered = np.einsum("...ijk,...k->...ij", g.grad(x), vec) + np.einsum(
            "...jk,...ik->...ij", metric, v.jacobian(x)
        )
        covariant = dlowered - np.einsum("...kij,...k->...ij", christoffel(g, x), lowered)
        return 0.5 * (covariant + np.swapaxes(covariant, -1, -2))

    return TensorFunction(value)


# Pixel discretisation


@dataclass
class PixelField:
    """Packed components on a Cartesian node grid, indexed ``[i, j]`` = (x_i, y_j)."""

    grid: CartesianGrid
    values: Array
    order: int

    def as_field(self) -> FieldLike:
        bbox = (-self.grid.radius, self.grid.radius, -self.grid.radius, self.grid.radius)
        full = np.swapaxes(unpack(self.values, self.order), 0, 1)
        if self.order == 0:
            return GridScalarField(full, bbox)
        if self.order == 1:
            return GridCovectorField(full, bbox)
        return GridTensorField(full, bbox)


def pixel_grid(n: int = 81, radius: float = 1.0) -> CartesianGrid:
    return CartesianGrid(n, radius, ghost=0)


def sample_pixels(f: FieldLike, grid: CartesianGrid, order: typing.Optional[int] = None) -> PixelField:
    order = getattr(f, "order", 0) if order is None else order
    return PixelField(grid, pack(f.eval(grid.points()), order), order)


def disk_mask(grid: CartesianGrid, margin: float = 0.0) -> Array:
    return np.linalg.norm(grid.points(), axis=-1) < grid.radius + margin


def tensor_weights(g: MetricField, points: Array, order: int) -> Array:
    """Per-node inner product blocks ``(n, c, c)`` on packed components times √det g."""
    metric = g.eval(points)
    ginv = np.linalg.inv(metric)
    density = np.sqrt(np.linalg.det(metric))
    if order == 0:
        block = np.ones(len(points))[:, None, None]
    elif order == 1:
        block = ginv
    else:
        expand = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        full = np.einsum("nik,njl->nijkl", ginv, ginv).reshape(-1, 4, 4)
        block = np.einsum("ab,nac,cd->nbd", expand, full, expand)
    return block * density[:, None, None]


def field_inner(g: MetricField, a: PixelField, b: PixelField, mask: typing.Optional[Array] = None) -> float:
    grid = a.grid
    mask = disk_mask(grid) if mask is None else mask
    points = grid.points()[mask]
    block = tensor_weights(g, points, a.order)
    return float(np.einsum("na,nab,nb->", a.values[mask], block, b.values[mask]) * grid.spacing**2)


def field_norm(g: MetricField, a: PixelField, mask: typing.Optional[Array] = None) -> float:
    return float(np.sqrt(max(field_inner(g, a, a, mask), 0.0)))


class XRayOperator:
    """
    Sparse matrix of the transform acting on packed pixel components with
    bilinear interpolation. Columns are ``component · n_active + pixel``.
    """

    def __init__(self, table: RayTable, grid: CartesianGrid, order: int) -> None:
        self.table = table
        self.grid = grid
        self.order = order
        self.active = disk_mask(grid, 1.5 * grid.spacing)
        self.n_active = int(self.active.sum())
        index = np.full(self.active.shape, -1)
        index[self.active] = np.arange(self.n_active)
        self.index = index
        self.matrix = self._assemble()

    def _assemble(self) -> sparse.csr_matrix:
        table, grid = self.table, self.grid
        n = grid.n
        h = grid.spacing
        local = (table.points + grid.radius) / h
        cell = np.clip(np.floor(local).astype(int), 0, n - 2)
        frac = local - cell
        coefficients = contraction(table.velocities, self.order) * table.weights[:, None]
        valid_ray = table.valid.ravel()[table.ray]
        rows, cols, data = [], [], []
        for di in (0, 1):
            for dj in (0, 1):
                wx = frac[:, 0] if di else 1 - frac[:, 0]
                wy = frac[:, 1] if dj else 1 - frac[:, 1]
                pixel = self.index[cell[:, 0] + di, cell[:, 1] + dj]
                keep = (pixel >= 0) & valid_ray
                for c in range(coefficients.shape[1]):
                    rows.append(table.ray[keep])
                    cols.append(c * self.n_active + pixel[keep])
                    data.append((wx * wy * coefficients[:, c])[keep])
        shape = (table.valid.size, COMPONENTS[self.order] * self.n_active)
        return sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        ).tocsr()

    def flatten(self, f: PixelField) -> Array:
        return f.values[self.active].T.ravel()

    def expand(self, vector: Array) -> PixelField:
        values = np.zeros(self.active.shape + (COMPONENTS[self.order],))
        values[self.active] = vector.reshape(COMPONENTS[self.order], self.n_active).T
        return PixelField(self.grid, values, self.order)

    def apply(self, f: PixelField) -> Array:
        return (self.matrix @ self.flatten(f)).reshape(self.table.grid.shape)


# Adjoint


@dataclass
class AdjointResult:
    field: PixelField
    undersampled: bool
    n_directions: int


def _sinogram_spline(s: Sinogram) -> RectBivariateSpline:
    alpha, beta = s.grid.alpha, s.grid.beta
    pad = 4
    extended = np.concatenate([alpha[-pad:] - 2 * np.pi, alpha, alpha[:pad] + 2 * np.pi])
    values = np.where(s.valid, s.values, 0.0)
    stacked = np.concatenate([values[-pad:], values, values[:pad]], axis=0)
    return RectBivariateSpline(extended, beta, stacked, kx=3, ky=3)


def adjoint_xray(
    g: MetricField,
    s: Sinogram,
    grid: typing.Optional[CartesianGrid] = None,
    n_directions: int = 64,
    step: typing.Optional[float] = None,
    batch: int = 40000,
) -> AdjointResult:
    """
    (I*s)(x) = ∫_{|v|_g = 1} s(γ_{x,v}) v⊗…⊗v dv, with s read at the Γ₋ node of
    the maximal geodesic through (x, v).
    """
    grid = grid or pixel_grid(radius=s.grid.radius)
    undersampled = min(s.grid.n_alpha, s.grid.n_beta) < MIN_ADJOINT_SAMPLES
    if undersampled:
        logger.warning(
            "Sinogram grid %dx%d is below %d samples per axis; adjoint is undersampled.",
            s.grid.n_alpha,
            s.grid.n_beta,
            MIN_ADJOINT_SAMPLES,
        )
    order = s.tensor_order
    domain = s.grid.domain()
    mask = np.linalg.norm(grid.points(), axis=-1) < s.grid.radius
    points = grid.points()[mask]
    metric = g.eval(points)
    frame = np.linalg.inv(np.linalg.cholesky(metric)).swapaxes(-1, -2)
    psi = 2 * np.pi * np.arange(n_directions) / n_directions
    unit = np.stack([np.cos(psi), np.sin(psi)], axis=-1)
    velocities = np.einsum("pij,dj->pdi", frame, unit).reshape(-1, 2)
    starts = np.repeat(points, n_directions, axis=0)
    spline = _sinogram_spline(s)
    integrator = RayIntegrator(g, s.grid.radius, step or 2 * default_step(domain), 20.0 * domain.diameter)
    beta_lo, beta_hi = s.grid.beta[0], s.grid.beta[-1]
    samples = np.zeros(len(starts))
    for lo in range(0, len(starts), batch):
        hi = min(lo + batch, len(starts))
        covector = -np.einsum("nij,nj->ni", g.eval(starts[lo:hi]), velocities[lo:hi])
        bundle = integrator.run(starts[lo:hi], covector, stride=10**9)
        entry = bundle.exit_point
        inward = -np.einsum("nij,nj->ni", g.inverse(entry), bundle.exit_covector)
        alpha, beta = s.grid.locate(g, entry, inward)
        value = spline.ev(np.mod(alpha, 2 * np.pi), np.clip(beta, beta_lo, beta_hi))
        samples[lo:hi] = np.where(bundle.converged, value, 0.0)
    weights = samples.reshape(len(points), n_directions) * (2 * np.pi / n_directions)
    fan = velocities.reshape(len(points), n_directions, 2)
    # ∫ s v^i ⊗ … dv is contravariant; packed fields hold covariant components.
    if order == 0:
        packed = weights.sum(axis=1)[:, None]
    elif order == 1:
        packed = np.einsum("pij,pd,pdj->pi", metric, weights, fan)
    else:
        upper = np.einsum("pd,pdi,pdj->pij", weights, fan, fan)
        packed = pack(metric @ upper @ metric, 2)
    values = np.zeros(mask.shape + (COMPONENTS[order],))
    values[mask] = packed
    return AdjointResult(PixelField(grid, values, order), undersampled, n_directions)


# Solenoidal decomposition


@dataclass
class ProjectionResult:
    solenoidal: PixelField
    potential: PixelField
    divergence_residual: float
    orthogonality: float
    iterations: int


def _difference_matrix(n: int, h: float) -> sparse.csr_matrix:
    d = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
    d[0, :] = 0
    d[n - 1, :] = 0
    return (d / (2 * h)).tocsr()


def _block_diagonal(blocks: Array) -> sparse.csr_matrix:
    c = blocks.shape[1]
    return sparse.bmat([[sparse.diags(blocks[:, a, b]) for b in range(c)] for a in range(c)], format="csr")


def potential_operator(g: MetricField, grid: CartesianGrid, order: int) -> typing.Tuple[sparse.csr_matrix, Array, Array]:
    """
    D mapping potentials (a scalar for one-forms, a covariant one-form for
    2-tensors) vanishing outside the open disk to packed tensor components on
    the disk nodes. Returns (D, tensor node mask, potential node mask).
    """
    n, h = grid.n, grid.spacing
    radius = np.linalg.norm(grid.points(), axis=-1)
    rows = radius < grid.radius + 1e-12
    cols = radius < grid.radius - 1e-12
    d1 = _difference_matrix(n, h)
    eye = sparse.identity(n, format="csr")
    flat_rows = np.flatnonzero(rows.ravel())
    flat_cols = np.flatnonzero(cols.ravel())
    dx = sparse.kron(d1, eye, format="csr")[flat_rows][:, flat_cols]
    dy = sparse.kron(eye, d1, format="csr")[flat_rows][:, flat_cols]
    if order == 1:
        return sparse.vstack([dx, dy], format="csr"), rows, cols
    select = sparse.identity(n * n, format="csr")[flat_rows][:, flat_cols]
    gamma = christoffel(g, grid.points()[rows])

    def term(k: int, i: int, j: int) -> sparse.csr_matrix:
        return sparse.diags(gamma[:, k, i, j]) @ select

    D = sparse.bmat(
        [
            [dx - term(0, 0, 0), -term(1, 0, 0)],
            [0.5 * dy - term(0, 0, 1), 0.5 * dx - term(1, 0, 1)],
            [-term(0, 1, 1), dy - term(1, 1, 1)],
        ],
        format="csr",
    )
    return D, rows, cols


def solenoidal_project(
    g: MetricField,
    f: typing.Union[FieldLike, PixelField],
    grid: typing.Optional[CartesianGrid] = None,
) -> ProjectionResult:
    """f = fˢ + D v with Dᵀ W fˢ = 0 and v = 0 outside the disk."""
    if not isinstance(f, PixelField):
        f = sample_pixels(f, grid or pixel_grid())
    grid, order = f.grid, f.order
    D, rows, cols = potential_operator(g, grid, order)
    c = COMPONENTS[order]
    W = _block_diagonal(tensor_weights(g, grid.points()[rows], order))
    vector = f.values[rows].T.ravel()
    normal = (D.T @ W @ D).tocsr()
    rhs = D.T @ (W @ vector)
    iterations = 0

    def count(_: Array) -> None:
        nonlocal iterations
        iterations += 1

    potential, info = cg(normal, rhs, rtol=PROJECTION_RTOL, maxiter=PROJECTION_MAXITER, callback=count)
    if info != 0:
        residual = float(np.linalg.norm(normal @ potential - rhs) / max(np.linalg.norm(rhs), 1e-300))
        msg = "Solenoidal projection did not converge (relative residual %.3e)."
        raise ConvergenceError(msg % residual, residual)
    gradient = D @ potential
    solenoidal = vector - gradient
    scale = max(float(np.linalg.norm(D.T @ (W @ vector))), 1e-300)
    divergence = float(np.linalg.norm(D.T @ (W @ solenoidal))) / scale
    norms = np.sqrt(max(solenoidal @ (W @ solenoidal), 0.0) * max(gradient @ (W @ gradient), 0.0))
    orthogonality = float(abs(solenoidal @ (W @ gradient)) / norms) if norms > 0 else 0.0
    logger.debug("Solenoidal projection: %d CG iterations, divergence residual %.2e.", iterations, divergence)

    values = np.zeros(f.values.shape)
    values[rows] = solenoidal.reshape(c, -1).T
    p = 1 if order == 1 else 2
    potential_values = np.zeros(rows.shape + (p,))
    potential_values[cols] = potential.reshape(p, -1).T
    return ProjectionResult(
        solenoidal=PixelField(grid, values, order),
        potential=PixelField(grid, potential_values, order - 1),
        divergence_residual=divergence,
        orthogonality=orthogonality,
        iterations=iterations,
    )


# Inversion


@dataclass
class InversionResult:
    field: PixelField
    residuals: typing.List[float]
    iterations: int
    converged: bool
    projection: typing.Optional[ProjectionResult] = None
    diagnostics: typing.Dict[str, float] = field(default_factory=dict)


def invert_xray(
    g: MetricField,
    s: Sinogram,
    order: typing.Optional[int] = None,
    grid: typing.Optional[CartesianGrid] = None,
    table: typing.Optional[RayTable] = None,
    rtol: float = CG_RTOL,
    maxiter: int = CG_MAXITER,
) -> InversionResult:
    """
    CG on the normal equations Aᵀ M A f = Aᵀ M s with M the dμ weights. For
    one-forms and 2-tensors the result is reported as its solenoidal part.
    """
    order = s.tensor_order if order is None else order
    grid = grid or pixel_grid(radius=s.grid.radius)
    table = table or RayTable.trace(g, s.grid)
    operator = XRayOperator(table, grid, order)
    A = operator.matrix
    m = np.where(s.valid, s.weights, 0.0).ravel()
    data = np.where(s.valid, s.values, 0.0).ravel()
    size = A.shape[1]
    normal = LinearOperator((size, size), matvec=lambda v: A.T @ (m * (A @ v)), dtype=float)
    rhs = A.T @ (m * data)
    data_norm = max(float(np.sqrt(np.sum(m * data**2))), 1e-300)
    residuals: typing.List[float] = []

    def track(xk: Array) -> None:
        r = A @ xk - data
        residuals.append(float(np.sqrt(np.sum(m * r * r))) / data_norm)

    solution, info = cg(normal, rhs, rtol=rtol, maxiter=maxiter, callback=track)
    converged = info == 0
    if not converged:
        logger.warning(
            "CGNE stopped after %d iterations at relative data residual %.3e.",
            len(residuals),
            residuals[-1] if residuals else 1.0,
        )
    result = operator.expand(solution)
    projection = None
    if order >= 1:
        projection = solenoidal_project(g, result)
        result = projection.solenoidal
    return InversionResult(
        field=result,
        residuals=residuals,
        iterations=len(residuals),
        converged=converged,
        projection=projection,
        diagnostics={"final_residual": residuals[-1] if residuals else 1.0},
    )


def boundedness_ratio(g: MetricField, f: FieldLike, grid: InflowGrid, pixels: typing.Optional[CartesianGrid] = None) -> float:
    """‖I f‖_{L²(dμ)} / ‖f‖_{L²}."""
    sinogram = xray(g, f, grid)
    norm = field_norm(g, sample_pixels(f, pixels or pixel_grid(radius=grid.radius)))
    return sinogram.norm() / norm if norm > 0 else 0.0
