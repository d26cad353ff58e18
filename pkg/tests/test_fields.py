import numpy as np
import pytest

from simpleray.fields import (
    CompactBump,
    ConformalMetric,
    ConstantScalar,
    GaussianBump,
    GridMetric,
    GridScalarField,
    RotatedGradient,
    cutoff,
    sample_on_grid,
    smoothstep,
)
from simpleray.registry import metric_from_id
from tests.utils import disk_points


@pytest.mark.parametrize("u, expected", [(0.0, 1.0), (0.25, 1.0), (0.5, 1.0), (1.0, 0.0), (1.7, 0.0)])
def test_cutoff_values(u: float, expected: float) -> None:
    value, first, second = cutoff(np.array(u))
    assert value == pytest.approx(expected)
    assert first == pytest.approx(0.0)
    assert second == pytest.approx(0.0)


def test_cutoff_is_monotone_on_the_ramp() -> None:
    value, first, _ = cutoff(np.linspace(0.5, 1.0, 41))
    assert np.all(np.diff(value) <= 0)
    assert np.all(first <= 0)


def test_smoothstep_midpoint() -> None:
    value, first, second = smoothstep(np.array(0.5))
    assert value == pytest.approx(0.5)
    assert first == pytest.approx(140.0 / 64)
    assert second == pytest.approx(0.0)


def test_compact_bump_support() -> None:
    bump = CompactBump((0.2, -0.1), 0.3, amplitude=2.0)
    assert bump(np.array([0.2, -0.1])) == pytest.approx(2.0)
    outside = np.array([[0.6, -0.1], [0.2, 0.25], [-0.2, -0.1]])
    assert np.all(bump(outside) == 0.0)
    assert np.all(bump.grad(outside) == 0.0)


def test_gaussian_bump_gradient_matches_differences() -> None:
    bump = GaussianBump((0.1, 0.2), 0.4, amplitude=1.5)
    x = disk_points()
    h = 1e-6
    numeric = np.stack(
        [(bump(x + h * e) - bump(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1
    )
    assert np.allclose(bump.grad(x), numeric, atol=1e-7)


def test_rotated_gradient_is_divergence_free() -> None:
    b = RotatedGradient(GaussianBump((0.0, 0.0), 0.3))
    jac = b.jacobian(disk_points())
    assert np.allclose(jac[..., 0, 0] + jac[..., 1, 1], 0.0, atol=1e-12)


def test_conformal_metric_inverse_and_det() -> None:
    g = ConformalMetric(ConstantScalar(4.0))
    x = disk_points()
    assert np.allclose(g.eval(x), 4.0 * np.eye(2))
    assert np.allclose(g.inverse(x), 0.25 * np.eye(2))
    assert np.allclose(g.det(x), 16.0)


def test_grid_scalar_field_reproduces_quadratics() -> None:
    values, bbox = sample_on_grid(lambda p: p[..., 0] ** 2 + 2 * p[..., 1], 21, 1.15)
    field = GridScalarField(values, bbox)
    x = disk_points()
    assert np.allclose(field(x), x[:, 0] ** 2 + 2 * x[:, 1], atol=1e-10)
    assert np.allclose(field.grad(x), np.stack([2 * x[:, 0], 2 + 0 * x[:, 1]], axis=-1), atol=1e-8)


def test_grid_metric_matches_sampled_metric() -> None:
    g = metric_from_id("gauss1")
    values, bbox = sample_on_grid(g.eval, 81, 1.15)
    grid = GridMetric(values, bbox, identifier="sampled")
    x = disk_points()
    assert grid.identifier == "sampled"
    assert np.allclose(grid.eval(x), g.eval(x), atol=1e-4)
    assert np.allclose(grid.inverse(x), g.inverse(x), atol=1e-4)


def test_sample_on_grid_uses_xy_indexing() -> None:
    values, bbox = sample_on_grid(lambda p: p[..., 0], 5, 1.0)
    assert bbox == (-1.0, 1.0, -1.0, 1.0)
    assert np.allclose(values[0], np.linspace(-1.0, 1.0, 5))
    assert np.allclose(values[:, 0], -1.0)
