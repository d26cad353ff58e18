import numpy as np
import pytest

from simpleray.charts_gauge import (
    BoundaryLayer,
    GaugeElement,
    SemiGeodesicChart,
    act,
    boundary_jet,
    spectral_derivative,
    standard_points,
)
from simpleray.exceptions import DomainError
from simpleray.fields import GaussianBump
from simpleray.manifold import CoefficientTriple
from simpleray.registry import triple_from_ids
from tests.utils import disk_points


@pytest.mark.parametrize(
    "metric, h0, h1, h2",
    [("euclid", 1.0, -2.0, 2.0), ("conformal:2", 4.0, -4.0, 2.0)],
)
def test_boundary_jet_of_constant_metrics(metric: str, h0: float, h1: float, h2: float) -> None:
    jet = boundary_jet(triple_from_ids(metric), n_alpha=32)
    assert jet.size == 32
    assert np.allclose(jet.h0, h0)
    assert np.allclose(jet.h1, h1)
    assert np.allclose(jet.h2, h2)
    assert np.allclose(jet.b0, 0.0)
    assert np.allclose(jet.curvature, 0.0)


def test_boundary_jet_reads_tangential_covector() -> None:
    jet = boundary_jet(triple_from_ids("euclid", "const:0,1"), n_alpha=8)
    assert np.allclose(jet.b0, np.cos(jet.alpha))
    assert np.allclose(jet.b1, 0.0)


@pytest.fixture(scope="module")
def layer() -> BoundaryLayer:
    return BoundaryLayer(triple_from_ids("euclid").g, depth=0.3, n_alpha=64, n_depth=30)


def test_boundary_layer_maps_radially(layer: BoundaryLayer) -> None:
    alpha = np.array([0.0, 1.0, 2.5, 4.0])
    r = np.array([0.0, 0.1, 0.2, -0.1])
    expected = (1.0 - r)[:, None] * np.stack([np.cos(alpha), np.sin(alpha)], axis=-1)
    assert np.allclose(layer.map(alpha, r), expected, atol=1e-4)
    assert layer.valid_depth == pytest.approx(0.3)


def test_boundary_layer_inverse(layer: BoundaryLayer) -> None:
    x = 0.8 * np.array([[np.cos(1.0), np.sin(1.0)]])
    alpha, r, converged = layer.inverse(x)
    assert converged.all()
    assert alpha[0] == pytest.approx(1.0, abs=1e-4)
    assert r[0] == pytest.approx(0.2, abs=1e-4)


def test_boundary_layer_is_normal(layer: BoundaryLayer) -> None:
    assert layer.normality_residual() < 1e-8


def test_identity_gauge_returns_the_triple(lens: CoefficientTriple) -> None:
    assert act(GaugeElement.identity(), lens) is lens


def test_theta_gauge_shifts_the_covector(lens: CoefficientTriple) -> None:
    theta = GaussianBump((0.1, -0.2), 0.3, amplitude=0.5)
    moved = act(GaugeElement.from_theta(theta), lens)
    x = disk_points()
    assert np.allclose(moved.b.eval(x), lens.b.eval(x) - theta.grad(x))
    assert moved.g is lens.g


@pytest.mark.parametrize(
    "gauge",
    [GaugeElement.random(4), GaugeElement.boundary_layer(4)],
    ids=["random", "collar"],
)
def test_gauges_fix_the_boundary(gauge: GaugeElement) -> None:
    moved, theta = gauge.boundary_defect()
    assert moved < 1e-12
    assert theta < 1e-12


def test_inverse_undoes_the_map() -> None:
    gauge = GaugeElement.random(7)
    x = disk_points()
    assert np.allclose(gauge.inverse().map(gauge.map(x)), x, atol=1e-10)


def test_act_pulls_back_the_metric(euclid: CoefficientTriple) -> None:
    gauge = GaugeElement.random(2)
    moved = act(gauge, euclid, n=41)
    points, _ = standard_points(euclid.domain, 41)
    node = points[20:21, 25]
    jac = gauge.jacobian(node)
    expected = np.einsum("...ia,...ib->...ab", jac, jac)
    assert np.allclose(moved.g.eval(node), expected, atol=1e-10)
    assert np.allclose(moved.b.eval(node), -gauge.theta.grad(node), atol=1e-10)


def test_semigeodesic_chart_in_the_plane(euclid: CoefficientTriple) -> None:
    chart = SemiGeodesicChart(euclid.g, (-1.1, 0.0))
    assert chart.angles[128] == pytest.approx(0.0, abs=1e-12)
    assert chart.hits[128]
    assert chart.rho_entry[128] == pytest.approx(0.1, abs=1e-6)
    assert chart.rho_exit[128] == pytest.approx(2.1, abs=1e-6)
    assert chart.phase(np.array([[0.0, 0.0]]))[0] == pytest.approx(1.1, abs=1e-3)
    assert chart.eikonal_residual() < 1e-8


def test_semigeodesic_chart_needs_an_exterior_source(euclid: CoefficientTriple) -> None:
    with pytest.raises(DomainError):
        SemiGeodesicChart(euclid.g, (-1.0, 0.0))


def test_spectral_derivative() -> None:
    alpha = 2 * np.pi * np.arange(32) / 32
    values = np.sin(3 * alpha)
    assert np.allclose(spectral_derivative(values), 3 * np.cos(3 * alpha))
    assert np.allclose(spectral_derivative(values, order=2), -9 * values)
