import csv
import os

import numpy as np
import pytest

from simpleray.exceptions import DomainError
from simpleray.geodesics import (
    InflowGrid,
    boundary_distance,
    dump_csv,
    flow_continuity_gap,
    gronwall_fit,
    santalo_total,
    shoot,
    simplicity_check,
    wrap_angle,
)
from simpleray.manifold import CoefficientTriple
from simpleray.registry import triple_from_ids


def test_euclidean_chord(euclid: CoefficientTriple) -> None:
    ray = shoot(euclid.g, (-1.0, 0.0), (1.0, 0.0))
    assert ray.converged
    assert ray.exit_time == pytest.approx(2.0, abs=1e-6)
    assert np.allclose(ray.exit_point, [1.0, 0.0], atol=1e-6)
    assert np.allclose(ray.exit_covector, [1.0, 0.0], atol=1e-6)
    assert ray.energy_drift < 1e-10


def test_energy_drift_is_measured_on_a_lens() -> None:
    g = triple_from_ids("gauss1").g
    z = np.array([-1.0, 0.0])
    v = np.array([1.0, 0.2])
    metric = g.eval(z)
    ray = shoot(g, z, metric @ v / np.sqrt(v @ metric @ v))
    assert ray.converged
    assert 0.0 < ray.energy_drift < 1e-9


def test_conformal_chord_is_slower() -> None:
    g = triple_from_ids("conformal:2").g
    ray = shoot(g, (-1.0, 0.0), (2.0, 0.0))
    assert ray.exit_time == pytest.approx(4.0, abs=1e-6)
    assert np.allclose(ray.exit_point, [1.0, 0.0], atol=1e-6)


@pytest.mark.parametrize(
    "z, omega",
    [
        ((-0.5, 0.0), (1.0, 0.0)),
        ((-1.0, 0.0), (2.0, 0.0)),
        ((-1.0, 0.0), (-1.0, 0.0)),
    ],
    ids=["off-circle", "not-unit", "outflow"],
)
def test_shoot_rejects_bad_inflow(euclid: CoefficientTriple, z, omega) -> None:
    with pytest.raises(DomainError):
        shoot(euclid.g, z, omega)


def test_rows_follow_the_trajectory(euclid: CoefficientTriple) -> None:
    ray = shoot(euclid.g, (0.0, -1.0), (0.0, 1.0))
    rows = ray.rows()
    assert rows[0] == pytest.approx((0.0, 0.0, -1.0, 0.0, 1.0))
    assert all(abs(x) < 1e-12 for _, x, _, _, _ in rows)


@pytest.mark.parametrize(
    "x, y, expected",
    [(np.pi, 0.0, 2.0), (np.pi / 2, 0.0, np.sqrt(2.0)), (0.0, 2 * np.pi / 3, np.sqrt(3.0))],
)
def test_euclidean_boundary_distance(euclid: CoefficientTriple, x: float, y: float, expected: float) -> None:
    assert boundary_distance(euclid.g, x, y) == pytest.approx(expected, abs=1e-6)


def test_boundary_distance_accepts_points(euclid: CoefficientTriple) -> None:
    assert boundary_distance(euclid.g, (-1.0, 0.0), (0.0, 1.0)) == pytest.approx(np.sqrt(2.0), abs=1e-6)


def test_coincident_points_are_rejected(euclid: CoefficientTriple) -> None:
    with pytest.raises(DomainError):
        boundary_distance(euclid.g, 0.3, 0.3 + 2 * np.pi)


def test_euclidean_disk_is_simple(euclid: CoefficientTriple) -> None:
    report = simplicity_check(euclid.g, n_alpha=16, n_beta=15)
    assert report.is_simple
    assert report.boundary_convexity_min == pytest.approx(1.0, abs=1e-6)
    assert report.min_jacobi == pytest.approx(1.0, abs=1e-6)
    assert report.diverged_rays == 0


def test_santalo_total_of_the_disk(euclid: CoefficientTriple) -> None:
    grid = InflowGrid(64, 64)
    expected = 2 * np.pi * 2 * np.cos(grid.delta_beta)
    assert santalo_total(euclid.g, grid) == pytest.approx(expected, rel=1e-3)
    assert santalo_total(euclid.g, grid) == pytest.approx(4 * np.pi, rel=1e-3)


def test_locate_inverts_initial_data(lens: CoefficientTriple, small_inflow: InflowGrid) -> None:
    data = small_inflow.initial_data(lens.g)
    alpha, beta = small_inflow.locate(lens.g, data.points, data.vectors)
    assert np.allclose(wrap_angle(alpha - data.alpha), 0.0, atol=1e-10)
    assert np.allclose(beta, data.beta, atol=1e-10)


def test_inflow_vectors_have_unit_speed(lens: CoefficientTriple, small_inflow: InflowGrid) -> None:
    data = small_inflow.initial_data(lens.g)
    speed = np.einsum("...i,...i->...", data.covectors, data.vectors)
    assert np.allclose(speed, 1.0)


def test_identical_metrics_have_no_flow_gap(lens: CoefficientTriple) -> None:
    gap = flow_continuity_gap(lens.g, lens.g, ((-1.0, 0.0), (1.0, 0.0)))
    assert gap == 0.0


def test_gronwall_fit_of_linear_gaps() -> None:
    eps = np.array([0.1, 0.05, 0.025, 0.0125])
    fit = gronwall_fit(2 * eps, eps)
    assert fit.constant == pytest.approx(2.0)
    assert fit.rate == pytest.approx(1.0)
    assert fit.nonincreasing


def test_gronwall_fit_flags_growing_ratios() -> None:
    eps = np.array([0.1, 0.05, 0.025])
    fit = gronwall_fit(np.sqrt(eps), eps)
    assert fit.rate == pytest.approx(0.5)
    assert not fit.nonincreasing


@pytest.mark.parametrize(
    "angle, expected",
    [(0.0, 0.0), (np.pi, np.pi), (-np.pi, np.pi), (3 * np.pi / 2, -np.pi / 2), (4 * np.pi + 0.1, 0.1)],
)
def test_wrap_angle(angle: float, expected: float) -> None:
    assert wrap_angle(angle) == pytest.approx(expected)


def test_dump_csv(euclid: CoefficientTriple, tmp_path) -> None:
    ray = shoot(euclid.g, (-1.0, 0.0), (1.0, 0.0))
    path = os.path.join(str(tmp_path), "geodesic.csv")
    dump_csv(ray, path)
    with open(path, newline="") as stream:
        rows = list(csv.reader(stream))
    assert rows[0] == ["t", "x", "y", "xi1", "xi2"]
    assert len(rows) == len(ray.t) + 1
