import numpy as np
import pytest

from simpleray.exceptions import DomainError
from simpleray.fields import ScalarFunction
from simpleray.manifold import (
    CartesianGrid,
    CoefficientTriple,
    Domain,
    apply_P,
    assemble_P,
    derived_BQ,
    laplace_beltrami,
    weighted_inner,
)
from simpleray.registry import metric_from_id, triple_from_ids
from tests.utils import disk_points

SQUARE = ScalarFunction(
    lambda x: np.sum(x * x, axis=-1),
    lambda x: 2.0 * x,
    lambda x: np.broadcast_to(2.0 * np.eye(2), x.shape + (2,)),
)

GRID = CartesianGrid(19, radius=0.9)


@pytest.mark.parametrize("boundary, extended", [(1.0, 1.0), (1.0, 0.9), (0.0, 1.0), (-1.0, 1.0)])
def test_domain_rejects_bad_radii(boundary: float, extended: float) -> None:
    with pytest.raises(DomainError):
        Domain(boundary_radius=boundary, extended_radius=extended)


def test_domain_geometry() -> None:
    domain = Domain()
    g = metric_from_id("conformal:2")
    alpha = np.linspace(0, 2 * np.pi, 7)
    nu = domain.conormal(g, alpha)
    assert np.allclose(np.einsum("ni,nij,nj->n", nu, g.inverse(domain.boundary_point(alpha)), nu), 1.0)
    normal = domain.inward_normal(g, alpha)
    assert np.allclose(normal, -0.5 * domain.boundary_point(alpha))
    assert np.allclose(domain.angle_of(domain.boundary_point(alpha[:-1])), alpha[:-1])
    assert domain.diameter == 2.0


def test_check_extended() -> None:
    domain = Domain()
    domain.check_extended(np.array([[1.15, 0.0], [0.0, -1.0]]))
    with pytest.raises(DomainError):
        domain.check_extended(np.array([1.2, 0.0]))


def test_replace_keeps_other_fields(euclid: CoefficientTriple) -> None:
    changed = euclid.replace(name="renamed")
    assert changed.name == "renamed"
    assert changed.g is euclid.g
    assert changed.domain == euclid.domain


@pytest.mark.parametrize("identifier, expected", [("euclid", 4.0), ("conformal:2", 1.0), ("conformal:0.5", 16.0)])
def test_laplace_beltrami_of_a_square(identifier: str, expected: float) -> None:
    values = laplace_beltrami(metric_from_id(identifier), SQUARE, disk_points())
    assert np.allclose(values, expected)


def test_laplace_beltrami_outside_the_extended_disk() -> None:
    with pytest.raises(DomainError):
        laplace_beltrami(metric_from_id("euclid"), SQUARE, np.array([2.0, 0.0]))


def test_derived_coefficients_for_a_constant_covector() -> None:
    t = triple_from_ids("euclid", "const:0.2,-0.1", "const:1")
    derived = derived_BQ(t, disk_points())
    assert np.allclose(derived.B, [0.4, -0.2])
    assert np.allclose(derived.Q_real, 1.05)
    assert np.allclose(derived.Q_imag, 0.0)


def test_derived_coefficients_scale_with_the_metric() -> None:
    t = triple_from_ids("conformal:2", "const:0.4,0")
    derived = derived_BQ(t, disk_points())
    assert np.allclose(derived.B, [0.2, 0.0])
    assert np.allclose(derived.Q_real, 0.04)


def test_grid_layout() -> None:
    grid = CartesianGrid(5, radius=1.0, ghost=1)
    assert grid.spacing == pytest.approx(0.5)
    assert grid.shape == (7, 7)
    points = grid.points()
    assert points[0, 3] == pytest.approx([-1.5, 0.0])
    assert points[grid.interior].shape == (5, 5, 2)


def test_operator_on_a_square(euclid: CoefficientTriple) -> None:
    u = np.sum(GRID.points() ** 2, axis=-1)
    assert np.allclose(apply_P(euclid, u, GRID), -4.0)


def test_matrix_matches_stencil(lens: CoefficientTriple) -> None:
    rng = np.random.default_rng(0)
    u = rng.normal(size=GRID.shape) + 1j * rng.normal(size=GRID.shape)
    matrix = assemble_P(lens, GRID)
    assert matrix.shape == (GRID.n**2, GRID.shape[0] * GRID.shape[1])
    stencil = apply_P(lens, u, GRID)
    assert np.allclose((matrix @ u.ravel()).reshape(GRID.n, GRID.n), stencil)


def test_magnetic_plane_wave_is_nearly_annihilated() -> None:
    t = triple_from_ids("euclid", "const:0.5,0.3")
    u = np.exp(1j * GRID.points() @ np.array([0.5, 0.3]))
    assert np.abs(apply_P(t, u, GRID)).max() < 1e-2


def test_operator_is_symmetric_on_compact_fields(lens: CoefficientTriple) -> None:
    rng = np.random.default_rng(1)
    inner = np.zeros(GRID.shape, dtype=bool)
    inner[4:-4, 4:-4] = True
    u = np.where(inner, rng.normal(size=GRID.shape), 0.0)
    v = np.where(inner, rng.normal(size=GRID.shape), 0.0)
    left = weighted_inner(lens, GRID, apply_P(lens, u, GRID), v[GRID.interior])
    right = weighted_inner(lens, GRID, u[GRID.interior], apply_P(lens, v, GRID))
    assert left == pytest.approx(right, rel=1e-8)


def test_grid_must_fit_the_extended_disk(euclid: CoefficientTriple) -> None:
    grid = CartesianGrid(21, radius=1.0)
    with pytest.raises(DomainError):
        assemble_P(euclid, grid)


def test_field_shape_is_checked(euclid: CoefficientTriple) -> None:
    with pytest.raises(DomainError):
        apply_P(euclid, np.zeros((GRID.n, GRID.n)), GRID)
