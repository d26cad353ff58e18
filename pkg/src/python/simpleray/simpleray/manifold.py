import logging
import typing
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from simpleray.exceptions import DomainError
from simpleray.fields import (
    Array,
    ConstantCovector,
    ConstantScalar,
    CovectorField,
    MetricField,
    ScalarField,
)

logger = logging.getLogger("simpleray.error")

DOMAIN_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Domain:
    boundary_radius: float = 1.0
    extended_radius: float = 1.15

    def __post_init__(self) -> None:
        if not self.extended_radius > self.boundary_radius > 0:
            msg = "Extended radius %r must exceed the boundary radius %r."
            raise DomainError(msg % (self.extended_radius, self.boundary_radius))

    @property
    def diameter(self) -> float:
        return 2.0 * self.boundary_radius

    def boundary_point(self, alpha: Array) -> Array:
        alpha = np.asarray(alpha, dtype=float)
        return self.boundary_radius * np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)

    def boundary_tangent(self, alpha: Array) -> Array:
        """dz/dα, the coordinate tangent of the boundary parametrisation."""
        alpha = np.asarray(alpha, dtype=float)
        return self.boundary_radius * np.stack([-np.sin(alpha), np.cos(alpha)], axis=-1)

    def conormal(self, g: MetricField, alpha: Array) -> Array:
        """Outward unit conormal ν with g^{ij}ν_iν_j = 1."""
        alpha = np.asarray(alpha, dtype=float)
        n = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
        ginv = g.inverse(self.boundary_point(alpha))
        length = np.sqrt(np.einsum("...i,...ij,...j->...", n, ginv, n))
        return n / length[..., None]

    def inward_normal(self, g: MetricField, alpha: Array) -> Array:
        """Inward g-unit normal vector −g^{-1}ν."""
        nu = self.conormal(g, alpha)
        ginv = g.inverse(self.boundary_point(alpha))
        return -np.einsum("...ij,...j->...i", ginv, nu)

    def angle_of(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * np.pi)

    def check_extended(self, x: Array) -> None:
        radius = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        if np.any(radius > self.extended_radius + DOMAIN_TOLERANCE):
            msg = "Point outside the extended domain (|x| = %.6g > %.6g)."
            raise DomainError(msg % (float(np.max(radius)), self.extended_radius))


@dataclass(frozen=True)
class CoefficientTriple:
    g: MetricField
    b: CovectorField = field(default_factory=lambda: ConstantCovector((0.0, 0.0)))
    q: ScalarField = field(default_factory=lambda: ConstantScalar(0.0))
    domain: Domain = field(default_factory=Domain)
    name: str = "triple"
    bound: float = 10.0
    smoothness_order: int = 4

    def replace(self, **changes: typing.Any) -> "CoefficientTriple":
        values = {
            "g": self.g,
            "b": self.b,
            "q": self.q,
            "domain": self.domain,
            "name": self.name,
            "bound": self.bound,
            "smoothness_order": self.smoothness_order,
        }
        values.update(changes)
        return CoefficientTriple(**values)


# Differential geometry helpers


def volume_density(g: MetricField, x: Array) -> Array:
    return np.sqrt(np.linalg.det(g.eval(x)))


def norm_squared(g: MetricField, x: Array, covector: Array) -> Array:
    return np.einsum("...i,...ij,...j->...", covector, g.inverse(x), covector)


def rotate_unit(g: MetricField, x: Array, covector: Array) -> Array:
    """
    Vector obtained by rotating the velocity g^{-1}ξ by +90° in a positively
    oriented g-orthonormal frame: E = (−ξ₂, ξ₁)/√det g.
    """
    rot = np.stack([-covector[..., 1], covector[..., 0]], axis=-1)
    return rot / volume_density(g, x)[..., None]


def christoffel(g: MetricField, x: Array) -> Array:
    """Γ^l_ij as ``(..., l, i, j)``."""
    dg = g.grad(x)
    ginv = g.inverse(x)
    lowered = np.swapaxes(dg, -3, -2) + np.einsum("...jmi->...mij", dg) - dg
    return 0.5 * np.einsum("...lm,...mij->...lij", ginv, lowered)


def christoffel_derivative(g: MetricField, x: Array) -> Array:
    """∂_k Γ^l_ij as ``(..., k, l, i, j)``."""
    dg = g.grad(x)
    hg = g.hess(x)
    ginv = g.inverse(x)
    lowered = np.swapaxes(dg, -3, -2) + np.einsum("...jmi->...mij", dg) - dg
    # H[k, a, m, b] -> ∂_k ∂_a g_mb
    dlowered = (
        np.einsum("...kimj->...kmij", hg)
        + np.einsum("...kjmi->...kmij", hg)
        - hg
    )
    dginv = -np.einsum("...la,...kab,...bm->...klm", ginv, dg, ginv)
    return 0.5 * (
        np.einsum("...klm,...mij->...klij", dginv, lowered)
        + np.einsum("...lm,...kmij->...klij", ginv, dlowered)
    )


def gaussian_curvature(g: MetricField, x: Array) -> Array:
    gamma = christoffel(g, x)
    dgamma = christoffel_derivative(g, x)
    # R^l_{212} with indices (1, 2) -> (0, 1)
    riemann = (
        dgamma[..., 0, :, 1, 1]
        - dgamma[..., 1, :, 0, 1]
        + np.einsum("...lm,...m->...l", gamma[..., :, 0, :], gamma[..., :, 1, 1])
        - np.einsum("...lm,...m->...l", gamma[..., :, 1, :], gamma[..., :, 0, 1])
    )
    metric = g.eval(x)
    return np.einsum("...l,...l->...", metric[..., 0, :], riemann) / np.linalg.det(metric)


def min_eigenvalue(g: MetricField, x: Array) -> float:
    return float(np.linalg.eigvalsh(g.eval(x)).min())


# Operations


def laplace_beltrami(
    g: MetricField,
    u: ScalarField,
    x: Array,
    domain: typing.Optional[Domain] = None,
) -> Array:
    """Δ_g u = g^{ij}(∂_i∂_j u − Γ^k_ij ∂_k u)."""
    x = np.asarray(x, dtype=float)
    (domain or Domain()).check_extended(x)
    ginv = g.inverse(x)
    gamma = christoffel(g, x)
    hessian = u.hess(x) - np.einsum("...kij,...k->...ij", gamma, u.grad(x))
    return np.einsum("...ij,...ij->...", ginv, hessian)


@dataclass(frozen=True)
class DerivedCoefficients:
    """Coefficients of P written as −Δ_g − i B·∇ + Q with real and imaginary parts."""

    B: Array
    Q_real: Array
    Q_imag: Array


def derived_BQ(t: CoefficientTriple, x: Array) -> DerivedCoefficients:
    x = np.asarray(x, dtype=float)
    t.domain.check_extended(x)
    metric = t.g.eval(x)
    ginv = np.linalg.inv(metric)
    dg = t.g.grad(x)
    b = t.b.eval(x)
    db = t.b.jacobian(x)
    sharp = np.einsum("...ij,...j->...i", ginv, b)
    dginv = -np.einsum("...ia,...kab,...bj->...kij", ginv, dg, ginv)
    divergence_flat = np.einsum("...jjk,...k->...", dginv, b) + np.einsum(
        "...jk,...jk->...", ginv, db
    )
    dlog_density = 0.5 * np.einsum("...ab,...kab->...k", ginv, dg)
    divergence = divergence_flat + np.einsum("...j,...j->...", sharp, dlog_density)
    return DerivedCoefficients(
        B=2.0 * sharp,
        Q_real=t.q.eval(x) + np.einsum("...i,...i->...", b, sharp),
        Q_imag=divergence,
    )


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform node grid over ``[−radius, radius]²`` with ghost layers."""

    n: int
    radius: float = 1.0
    ghost: int = 2

    @property
    def spacing(self) -> float:
        return 2.0 * self.radius / (self.n - 1)

    @property
    def shape(self) -> typing.Tuple[int, int]:
        size = self.n + 2 * self.ghost
        return (size, size)

    @property
    def axis(self) -> Array:
        h = self.spacing
        return -self.radius + h * (np.arange(self.n + 2 * self.ghost) - self.ghost)

    @property
    def interior(self) -> typing.Tuple[slice, slice]:
        inner = slice(self.ghost, self.ghost + self.n)
        return (inner, inner)

    def points(self) -> Array:
        """Node coordinates, index ``[i, j]`` is ``(axis[i], axis[j])``."""
        xx, yy = np.meshgrid(self.axis, self.axis, indexing="ij")
        return np.stack([xx, yy], axis=-1)


@dataclass
class StaggeredCoefficients:
    """
    Coefficients of the Hermitian magnetic operator on a logically rectangular
    node grid of shape ``(n1, n2)``:

    * ``weight``: √G at nodes.
    * ``face1``/``b_face1``: √G G^{11} and b_1 on faces between nodes ``i`` and ``i+1``.
    * ``face2``/``b_face2``: √G G^{22} and b_2 between ``j`` and ``j+1``
      (wrapping when ``periodic``).
    * ``corner``/``b_corner1``/``b_corner2``: √G G^{12} and b at cell corners.
    """

    weight: Array
    potential: Array
    face1: Array
    b_face1: Array
    face2: Array
    b_face2: Array
    corner: Array
    b_corner1: Array
    b_corner2: Array
    h1: float
    h2: float
    periodic: bool = False


def staggered_from_metric(
    metric: typing.Callable[[Array], Array],
    covector: typing.Callable[[Array], Array],
    potential: Array,
    coords1: Array,
    coords2: Array,
    periodic: bool = False,
) -> StaggeredCoefficients:
    """
    Sample staggered coefficients from callables of the chart coordinates
    ``(u1, u2)`` that return the chart metric G and chart covector.
    """
    h1 = float(coords1[1] - coords1[0])
    h2 = float(coords2[1] - coords2[0])
    mid1 = 0.5 * (coords1[:-1] + coords1[1:])
    if periodic:
        coords2_next = np.append(coords2[1:], coords2[-1] + h2)
    else:
        coords2_next = coords2[1:]
    mid2 = 0.5 * (coords2[: len(coords2_next)] + coords2_next)

    def chart_points(c1: Array, c2: Array) -> Array:
        u1, u2 = np.meshgrid(c1, c2, indexing="ij")
        return np.stack([u1, u2], axis=-1)

    def sample(c1: Array, c2: Array) -> typing.Tuple[Array, Array, Array]:
        chart = chart_points(c1, c2)
        G = metric(chart)
        return np.sqrt(np.linalg.det(G)), np.linalg.inv(G), covector(chart)

    density = np.sqrt(np.abs(np.linalg.det(metric(chart_points(coords1, coords2)))))
    d1, Ginv1, b1 = sample(mid1, coords2)
    d2, Ginv2, b2 = sample(coords1, mid2)
    dc, Ginvc, bc = sample(mid1, mid2)
    return StaggeredCoefficients(
        weight=density,
        potential=np.asarray(potential, dtype=float),
        face1=d1 * Ginv1[..., 0, 0],
        b_face1=b1[..., 0],
        face2=d2 * Ginv2[..., 1, 1],
        b_face2=b2[..., 1],
        corner=dc * Ginvc[..., 0, 1],
        b_corner1=bc[..., 0],
        b_corner2=bc[..., 1],
        h1=h1,
        h2=h2,
        periodic=periodic,
    )


def _node_index(n1: int, n2: int) -> Array:
    return np.arange(n1 * n2).reshape(n1, n2)


def assemble_magnetic_operator(c: StaggeredCoefficients) -> sparse.csr_matrix:
    """
    Sparse matrix of W^{-1}(D₁ᴴ A D₁ + D₂ᴴ B D₂ + C₁ᴴ E C₂ + C₂ᴴ E C₁) + q over
    all nodes. Rows of nodes lacking a neighbour are incomplete and must be
    discarded by the caller.
    """
    n1, n2 = c.weight.shape
    index = _node_index(n1, n2)
    size = n1 * n2

    def difference(lo: Array, hi: Array, b: Array, h: float) -> sparse.csr_matrix:
        m = lo.size
        rows = np.repeat(np.arange(m), 2)
        cols = np.stack([hi.ravel(), lo.ravel()], axis=-1).ravel()
        half = 0.5j * b.ravel()
        data = np.stack([1.0 / h - half, -1.0 / h - half], axis=-1).ravel()
        return sparse.csr_matrix((data, (rows, cols)), shape=(m, size))

    def corner_gradient(
        quad: typing.Sequence[Array], b1: Array, b2: Array
    ) -> typing.Tuple[sparse.csr_matrix, sparse.csr_matrix]:
        a, b_, cc, d = quad  # (i, j), (i+1, j), (i, j+1), (i+1, j+1)
        m = a.size
        rows = np.repeat(np.arange(m), 4)
        cols = np.stack([a.ravel(), b_.ravel(), cc.ravel(), d.ravel()], axis=-1).ravel()
        s1 = np.array([-1.0, 1.0, -1.0, 1.0]) / (2 * c.h1)
        s2 = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * c.h2)
        avg1 = 0.25j * b1.ravel()[:, None]
        avg2 = 0.25j * b2.ravel()[:, None]
        data1 = (s1[None, :] - avg1).ravel()
        data2 = (s2[None, :] - avg2).ravel()
        shape = (m, size)
        return (
            sparse.csr_matrix((data1, (rows, cols)), shape=shape),
            sparse.csr_matrix((data2, (rows, cols)), shape=shape),
        )

    d1 = difference(index[:-1, :], index[1:, :], c.b_face1, c.h1)
    if c.periodic:
        upper2 = np.roll(index, -1, axis=1)
        lower2 = index
        quad = (index[:-1, :], index[1:, :], upper2[:-1, :], upper2[1:, :])
    else:
        upper2 = index[:, 1:]
        lower2 = index[:, :-1]
        quad = (index[:-1, :-1], index[1:, :-1], index[:-1, 1:], index[1:, 1:])
    d2 = difference(lower2, upper2, c.b_face2, c.h2)
    g1, g2 = corner_gradient(quad, c.b_corner1, c.b_corner2)

    form = (
        d1.conj().T @ sparse.diags(c.face1.ravel()) @ d1
        + d2.conj().T @ sparse.diags(c.face2.ravel()) @ d2
        + g1.conj().T @ sparse.diags(c.corner.ravel()) @ g2
        + g2.conj().T @ sparse.diags(c.corner.ravel()) @ g1
    )
    with np.errstate(divide="ignore"):
        inverse_weight = np.where(c.weight > 0, 1.0 / c.weight, 0.0)
    operator = sparse.diags(inverse_weight.ravel()) @ form + sparse.diags(
        c.potential.ravel().astype(complex)
    )
    return operator.tocsr()


def apply_magnetic_stencil(c: StaggeredCoefficients, u: Array) -> Array:
    """Array-slicing application of the operator of `assemble_magnetic_operator`."""
    u = np.asarray(u, dtype=complex)
    out = np.zeros_like(u)
    h1, h2 = c.h1, c.h2

    # Faces along the first axis
    flux = c.face1 * ((u[1:] - u[:-1]) / h1 - 0.5j * c.b_face1 * (u[1:] + u[:-1]))
    out[1:] += (1.0 / h1 + 0.5j * c.b_face1) * flux
    out[:-1] += (-1.0 / h1 + 0.5j * c.b_face1) * flux

    # Faces along the second axis
    if c.periodic:
        up = np.roll(u, -1, axis=1)
        flux = c.face2 * ((up - u) / h2 - 0.5j * c.b_face2 * (up + u))
        out += np.roll((1.0 / h2 + 0.5j * c.b_face2) * flux, 1, axis=1)
        out += (-1.0 / h2 + 0.5j * c.b_face2) * flux
        a, b, cc, d = u[:-1], u[1:], up[:-1], up[1:]
    else:
        flux = c.face2 * ((u[:, 1:] - u[:, :-1]) / h2 - 0.5j * c.b_face2 * (u[:, 1:] + u[:, :-1]))
        out[:, 1:] += (1.0 / h2 + 0.5j * c.b_face2) * flux
        out[:, :-1] += (-1.0 / h2 + 0.5j * c.b_face2) * flux
        a, b, cc, d = u[:-1, :-1], u[1:, :-1], u[:-1, 1:], u[1:, 1:]

    # Corner cross terms
    average = 0.25 * (a + b + cc + d)
    grad1 = (b + d - a - cc) / (2 * h1) - 1j * c.b_corner1 * average
    grad2 = (cc + d - a - b) / (2 * h2) - 1j * c.b_corner2 * average
    flux1 = c.corner * grad2  # pairs with conj(C₁)
    flux2 = c.corner * grad1  # pairs with conj(C₂)
    s1 = {"a": -1.0, "b": 1.0, "c": -1.0, "d": 1.0}
    s2 = {"a": -1.0, "b": -1.0, "c": 1.0, "d": 1.0}
    contributions = {}
    for key in "abcd":
        contributions[key] = (s1[key] / (2 * h1) + 0.25j * c.b_corner1) * flux1 + (
            s2[key] / (2 * h2) + 0.25j * c.b_corner2
        ) * flux2
    if c.periodic:
        out[:-1] += contributions["a"]
        out[1:] += contributions["b"]
        out[:-1] += np.roll(contributions["c"], 1, axis=1)
        out[1:] += np.roll(contributions["d"], 1, axis=1)
    else:
        out[:-1, :-1] += contributions["a"]
        out[1:, :-1] += contributions["b"]
        out[:-1, 1:] += contributions["c"]
        out[1:, 1:] += contributions["d"]

    with np.errstate(divide="ignore"):
        inverse_weight = np.where(c.weight > 0, 1.0 / c.weight, 0.0)
    return inverse_weight * out + c.potential * u


def _cartesian_coefficients(t: CoefficientTriple, grid: CartesianGrid) -> StaggeredCoefficients:
    if grid.radius + grid.ghost * grid.spacing > t.domain.extended_radius:
        msg = "Grid half-width %.4g does not fit the extended domain."
        raise DomainError(msg % (grid.radius + grid.ghost * grid.spacing))
    axis = grid.axis
    points = grid.points()
    return staggered_from_metric(t.g.eval, t.b.eval, t.q.eval(points), axis, axis)


def assemble_P(t: CoefficientTriple, grid: CartesianGrid) -> sparse.csr_matrix:
    """Rows of the interior nodes, columns over every node including ghosts."""
    operator = assemble_magnetic_operator(_cartesian_coefficients(t, grid))
    rows = _node_index(*grid.shape)[grid.interior].ravel()
    return operator[rows]


def apply_P(t: CoefficientTriple, u: Array, grid: CartesianGrid) -> Array:
    u = np.asarray(u)
    if u.shape != grid.shape:
        msg = "Grid field has shape %r, expected %r (including ghost layers)."
        raise DomainError(msg % (u.shape, grid.shape))
    full = apply_magnetic_stencil(_cartesian_coefficients(t, grid), u)
    return full[grid.interior]


def weighted_inner(
    t: CoefficientTriple, grid: CartesianGrid, u: Array, v: Array
) -> complex:
    """⟨u, v⟩_{L²(dV_g)} over interior nodes."""
    points = grid.points()[grid.interior]
    weight = volume_density(t.g, points) * grid.spacing**2
    return complex(np.sum(weight * np.conj(v) * u))
