import numpy as np
import pytest

from simpleray.charts_gauge import SemiGeodesicChart, boundary_jet
from simpleray.exceptions import GlancingError, ProbeError
from simpleray.manifold import CoefficientTriple
from simpleray.wkb import (
    MOMENT_RADIUS,
    DnRecord,
    ProbeConfig,
    local_terms,
    moment_directions,
    probe_cutoff,
    solve_eikonal_local,
    synth_dn,
    transport_A0,
    transport_A1,
    trace_coefficients,
    wkb_solution,
)


@pytest.mark.parametrize(
    "changes",
    [
        {"kind": "bogus"},
        {"t0": 0.0},
        {"t0": 1.2},
        {"eps": 0.6},
        {"order": 2},
        {"lam": -1.0},
    ],
)
def test_config_check_rejects(changes) -> None:
    probe = ProbeConfig(**changes)
    with pytest.raises(ProbeError):
        probe.check()


def test_config_with_lambda() -> None:
    probe = ProbeConfig().with_lambda(64)
    assert probe.lam == 64.0
    assert probe.as_dict()["lam"] == 64.0
    assert probe.as_dict()["z0"] == [-1.1, 0.0]


def test_cutoff_is_flat_at_the_centre() -> None:
    chi = probe_cutoff(np.array([0.5]), np.array([0.0, 0.1, 0.3]), t0=0.5, eps=0.25)
    assert chi.value[0].tolist() == pytest.approx([1.0, 1.0, 0.0])
    assert chi.t[0].tolist() == pytest.approx([0.0, 0.0, 0.0])


@pytest.mark.parametrize("omega", [0.0, 0.3, 0.6])
def test_euclidean_principal_coefficient(euclid: CoefficientTriple, omega: float) -> None:
    c1, _, _ = trace_coefficients(boundary_jet(euclid, n_alpha=32), omega)
    assert np.allclose(c1, 1j * np.sqrt(1.0 - omega**2))


def test_euclidean_normal_incidence(euclid: CoefficientTriple) -> None:
    c1, c0, _ = trace_coefficients(boundary_jet(euclid, n_alpha=32), 0.0)
    assert np.allclose(c1, 1j)
    assert np.allclose(c0, -0.5)


def test_glancing_frequency_is_rejected(euclid: CoefficientTriple) -> None:
    with pytest.raises(GlancingError):
        local_terms(boundary_jet(euclid, n_alpha=32), 1.0)


def test_local_eikonal_normal_frequency(euclid: CoefficientTriple) -> None:
    solution = solve_eikonal_local(euclid.g, 0.0, 0.5, n_rays=9, depth=0.1)
    assert np.allclose(solution.omega_n, np.sqrt(3.0) / 2)
    assert solution.boundary_residual < 1e-12
    assert solution.eikonal_residual() < 1e-10


def test_local_record_matches_the_coefficients(euclid: CoefficientTriple) -> None:
    probe = ProbeConfig(lam=32.0)
    record = synth_dn(euclid, probe, n_alpha=64)
    c1, c0, cm1 = trace_coefficients(boundary_jet(euclid, n_alpha=64), 0.0)
    expected = probe.lam * c1[0] + c0[0] + cm1[0] / probe.lam
    assert record.provenance == "wkb"
    assert record.source_norm > 0
    assert np.all(np.abs(np.angle(np.exp(1j * (record.angles - probe.x0)))) <= probe.eps)
    assert record.demodulated() == pytest.approx(expected, rel=1e-8)


def test_record_l2_norm_of_itself(euclid: CoefficientTriple) -> None:
    record = synth_dn(euclid, ProbeConfig(lam=16.0), n_alpha=64)
    assert record.l2_norm(record) == 0.0
    assert record.l2_norm() > 0.0


def test_amplitude_needs_column_phases() -> None:
    record = DnRecord(
        times=np.linspace(0.0, 1.0, 5),
        angles=np.zeros(1),
        trace=np.zeros((5, 1), dtype=complex),
        probe=ProbeConfig(),
        source_norm=1.0,
        provenance="fdtd",
        center_time=0.5,
        center_angle=0.0,
    )
    with pytest.raises(ProbeError):
        record.amplitude()


def test_moment_directions() -> None:
    directions = moment_directions()
    assert len(directions) == 4
    assert directions[0] == pytest.approx(MOMENT_RADIUS)
    assert directions[1] == pytest.approx(MOMENT_RADIUS / 2)
    assert directions[-1] == 0.0


def test_wkb_solution_orders(euclid: CoefficientTriple) -> None:
    chart = SemiGeodesicChart(euclid.g, (-1.1, 0.0), n_rays=65)
    first = wkb_solution(euclid, chart)
    assert first.remainder_order == 2
    assert first.transport_residual() == max(a.residual for a in first.amplitudes)
    assert first.eikonal_residual() < 1e-8
    assert wkb_solution(euclid, chart, order=0).remainder_order == 1
    with pytest.raises(ProbeError):
        wkb_solution(euclid, chart, order=2)


def test_euclidean_amplitude_spreads_like_a_point_source(euclid: CoefficientTriple) -> None:
    chart = SemiGeodesicChart(euclid.g, (-1.1, 0.0), n_rays=33)
    amplitude = transport_A0(euclid, chart)
    rows = np.flatnonzero(chart.hits)
    beyond = chart.rho[None, :] >= chart.rho_entry[rows, None]
    expected = np.sqrt(chart.rho_entry[rows, None] / np.maximum(chart.rho[None, :], chart.step))
    values = amplitude.values[rows]
    usable = beyond & np.isfinite(values)
    assert usable.any()
    assert np.allclose(values[usable], expected[usable], rtol=1e-6)
    assert amplitude.residual < 1e-4


def test_transport_residuals_on_a_lens(lens: CoefficientTriple) -> None:
    chart = SemiGeodesicChart(lens.g, (-1.1, 0.0), b=lens.b, n_rays=65)
    first = transport_A0(lens, chart)
    second = transport_A1(lens, chart, first)
    rows = np.flatnonzero(chart.hits)
    assert first.residual < 1e-3
    assert second.residual < 1e-2
    assert np.allclose(np.abs(first.at_entry()[rows]), 1.0, atol=1e-3)
    assert np.abs(second.at_entry()[rows]).max() < 1e-2
    assert "w" in second.extras
