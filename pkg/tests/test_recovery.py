from dataclasses import replace

import numpy as np
import pytest

from simpleray.charts_gauge import boundary_jet
from simpleray.exceptions import DomainError, ProbeError
from simpleray.fields import CompactBump, CovectorSum, RotatedGradient, ScalarSum
from simpleray.geodesics import InflowGrid
from simpleray.manifold import CoefficientTriple
from simpleray.recovery import (
    HolderSettings,
    balanced_lambdas,
    cascade_experiment,
    ck_interp_norm,
    ck_norm,
    collect_boundary_probes,
    distance_table_from_dn,
    extract_b_sinogram,
    extract_q_sinogram,
    family_member,
    fit_balanced,
    fit_exponent,
    fit_lambda_coefficients,
    gauge_errors,
    holder_experiment,
    jet_errors,
    modify_near_boundary,
    recover_boundary_jet,
    recover_boundary_jet1,
    recover_boundary_jet2,
    recover_boundary_metric,
    recover_metric_interior,
    run_pipeline,
    settings_hash,
    unwrap_valid,
)
from simpleray.registry import metric_from_id, triple_from_ids
from simpleray.xray import pixel_grid, xray

LAMS = (16.0, 32.0, 64.0, 128.0)


def test_lambda_fit_is_exact_on_the_model() -> None:
    c1, c0, cm1 = 0.8j, -0.5 + 0.1j, 0.3 - 0.2j
    values = np.array([[c1 * lam + c0 + cm1 / lam for lam in LAMS]])
    fit = fit_lambda_coefficients(values, LAMS)
    assert fit[0][0] == pytest.approx(c1)
    assert fit[1][0] == pytest.approx(c0)
    assert fit[2][0] == pytest.approx(cm1, abs=1e-8)


def test_lambda_fit_needs_enough_frequencies() -> None:
    with pytest.raises(ProbeError):
        fit_lambda_coefficients(np.zeros((1, 2)), LAMS[:2])


def test_balanced_lambdas() -> None:
    assert np.allclose(balanced_lambdas(1e-4), [1e4, 1e2, 1e1])


def test_balanced_fit_recovers_the_leading_coefficient() -> None:
    lams = balanced_lambdas(1e-8)
    values = np.array([2j * lam - 0.5 for lam in lams])
    c1, c0, _ = fit_balanced(values, lams)
    assert c1 == pytest.approx(2j - 0.5 / lams[0])
    assert c0 == pytest.approx(-0.5, abs=1e-3)


def test_euclidean_boundary_recovery(euclid: CoefficientTriple) -> None:
    probes = collect_boundary_probes(euclid, n_alpha=16)
    assert probes.values.shape == (16, 4, 4)
    assert not probes.balanced
    recovery = recover_boundary_jet(probes)
    errors = jet_errors(recovery.jet, boundary_jet(euclid, 16))
    assert errors["stage0"] < 1e-8
    assert errors["stage1"] < 1e-6
    assert errors["stage2"] < 1e-3


def test_modification_of_the_same_triple(euclid: CoefficientTriple) -> None:
    result = modify_near_boundary(euclid, euclid, None, 1e-5, M=5)
    assert result.triple is euclid
    assert result.depth == pytest.approx(0.1)
    assert not result.clipped
    assert result.change == 0.0


def test_modification_depth_is_clipped_to_the_chart(euclid: CoefficientTriple) -> None:
    t_tilde = triple_from_ids("conformal:1.1")
    result = modify_near_boundary(t_tilde, euclid, None, 1e-4, M=8, n=41)
    assert result.clipped
    assert result.depth == pytest.approx(0.25)
    boundary = np.array([[1.0, 0.0], [0.0, -1.0]])
    assert np.allclose(result.triple.g.eval(boundary), np.eye(2), atol=1e-3)
    assert np.allclose(result.triple.g.eval(np.zeros((1, 2))), 1.21 * np.eye(2))


@pytest.mark.parametrize("value", [0.0, 2.5, -3.0])
def test_ck_norm_of_a_constant(value: float) -> None:
    assert ck_norm(np.full((9, 9), value), 0.1, 2) == pytest.approx(abs(value))


def test_ck_norm_of_a_linear_function() -> None:
    axis = np.linspace(-1.0, 1.0, 21)
    values = np.add.outer(3 * axis, np.zeros(21))
    assert ck_norm(values, 0.1, 0) == pytest.approx(3.0)
    assert ck_norm(values, 0.1, 1) == pytest.approx(3.0)


def test_interpolation_order_must_be_an_integer() -> None:
    with pytest.raises(DomainError):
        ck_interp_norm(triple_from_ids("euclid").q, 0, 1, 0.5)


def test_family_member_at_zero_is_the_triple(lens: CoefficientTriple) -> None:
    assert family_member(lens, "mixed", 0.0) is lens


def test_potential_family_changes_only_q(lens: CoefficientTriple) -> None:
    member = family_member(lens, "potential", 0.1, seed=3)
    assert member.g is lens.g
    assert member.b is lens.b
    assert member.q is not lens.q


def test_unknown_family(lens: CoefficientTriple) -> None:
    with pytest.raises(ProbeError, match="Unknown experiment family"):
        family_member(lens, "bogus", 0.1)


def test_fit_exponent() -> None:
    deltas = np.array([1e-5, 1e-4, 1e-3, 1e-2, 1e-1])
    slope, (lo, hi) = fit_exponent(deltas, 3 * np.sqrt(deltas))
    assert slope == pytest.approx(0.5)
    assert lo <= slope <= hi


def test_fit_exponent_needs_four_points() -> None:
    deltas = np.array([0.0, 1e-3, 1e-2, 1e-1])
    slope, band = fit_exponent(deltas, deltas)
    assert np.isnan(slope)
    assert np.isnan(band[0])


def test_settings_hash() -> None:
    first = settings_hash(HolderSettings())
    assert first == settings_hash(HolderSettings())
    assert first != settings_hash(HolderSettings(seed=1))
    assert len(first) == 64


def test_gauge_errors_of_identical_triples(lens: CoefficientTriple) -> None:
    errors = gauge_errors(lens, lens, 21)
    assert errors == {"g": 0.0, "b": 0.0, "q": 0.0}


def test_masked_unwrap_skips_invalid_nodes() -> None:
    phases = np.array([[2.5, 3.0, 0.0, 3.5 - 2 * np.pi], [0.1, 0.2, 0.3, 0.4]])
    valid = np.array([[True, True, False, True], [False, False, False, False]])
    out = unwrap_valid(phases, valid)
    assert out[0] == pytest.approx([2.5, 3.0, 0.0, 3.5])
    assert np.all(out[1] == 0)
    assert np.unwrap(phases[0])[3] == pytest.approx(3.5 - 2 * np.pi)


def test_boundary_stages_on_a_lens(lens: CoefficientTriple) -> None:
    probes = collect_boundary_probes(lens, n_alpha=16)
    reference = boundary_jet(lens, 16)
    stage0 = recover_boundary_metric(probes)
    assert np.abs(stage0.values["h0"] - reference.h0).max() < 1e-6
    assert not stage0.flagged.any()
    stage1 = recover_boundary_jet1(probes, stage0)
    assert np.abs(stage1.values["h1"] - reference.h1).max() < 1e-4
    assert np.abs(stage1.values["b0"] - reference.b0).max() < 1e-4
    stage2 = recover_boundary_jet2(probes, stage0, stage1)
    for name in ("h2", "b1", "q0"):
        assert np.abs(stage2.values[name] - getattr(reference, name)).max() < 1e-2


def test_boundary_metric_needs_tangential_directions(euclid: CoefficientTriple) -> None:
    probes = collect_boundary_probes(euclid, n_alpha=8, omegas=np.zeros(2))
    with pytest.raises(ProbeError, match="unobservable"):
        recover_boundary_metric(probes)


def test_cascade_slopes_follow_the_stages(lens: CoefficientTriple) -> None:
    report = cascade_experiment(lens, n_alpha=16, seed=2)
    assert report.deltas.shape == (4,)
    assert report.slopes["stage0"] >= 0.8
    assert report.slopes["stage1"] >= 0.4
    assert report.slopes["stage2"] >= 0.2


BUMP_CENTER = (0.1, 0.0)
SMALL_FANS = InflowGrid(24, 24)


def relative_gap(extracted, direct) -> float:
    mask = extracted.valid & direct.valid
    assert mask.sum() > 0.5 * mask.size
    difference = np.linalg.norm((extracted.values - direct.values)[mask])
    return float(difference / np.linalg.norm(direct.values[mask]))


def test_b_sinogram_matches_the_transform(euclid: CoefficientTriple) -> None:
    swirl = RotatedGradient(CompactBump(BUMP_CENTER, 0.5))
    t_tilde = euclid.replace(b=CovectorSum([euclid.b, swirl], [1.0, 0.3]))
    extraction = extract_b_sinogram(euclid, t_tilde, SMALL_FANS, n_sources=24)
    assert not extraction.flagged.any()
    assert extraction.samples.skipped == 0
    direct = xray(euclid.g, CovectorSum([swirl], [-0.3]), SMALL_FANS)
    assert relative_gap(extraction.sinogram, direct) < 0.1


def test_q_sinogram_matches_the_transform(euclid: CoefficientTriple) -> None:
    bump = CompactBump(BUMP_CENTER, 0.4)
    t_tilde = euclid.replace(q=ScalarSum([euclid.q, bump], [1.0, 0.3]))
    extraction = extract_q_sinogram(euclid, t_tilde, SMALL_FANS, n_sources=24)
    direct = xray(euclid.g, ScalarSum([bump], [-0.3]), SMALL_FANS)
    assert relative_gap(extraction.sinogram, direct) < 0.15
    assert extraction.imaginary_residual < 0.1 * np.abs(direct.values).max()


def test_q_sinogram_needs_two_frequencies(euclid: CoefficientTriple) -> None:
    with pytest.raises(ProbeError, match="two frequencies"):
        extract_q_sinogram(euclid, euclid, SMALL_FANS, lams=(64.0,))


def test_distances_from_dn_match_chords(euclid: CoefficientTriple) -> None:
    table = distance_table_from_dn(euclid, n_sources=4, thetas=(0.0, 0.3))
    assert len(table.lengths) > 0
    chords = 2 * np.abs(np.sin((table.alpha_y - table.alpha_x) / 2))
    assert table.lengths == pytest.approx(chords, rel=0.05)


def test_interior_sinogram_of_a_conformal_scaling() -> None:
    g, g0 = metric_from_id("conformal:1.1"), metric_from_id("euclid")
    grid = InflowGrid(24, 24)

    def distances(alpha_x, alpha_y):
        return 1.1 * 2 * np.abs(np.sin((alpha_y - alpha_x) / 2))

    recovery = recover_metric_interior(g, g0, grid, pixel_grid(21), distances=distances)
    sinogram = recovery.sinogram
    expected = np.broadcast_to(0.4 * np.cos(grid.beta)[None, :], grid.shape)
    assert sinogram.tensor_order == 2
    assert sinogram.values[sinogram.valid] == pytest.approx(expected[sinogram.valid], abs=1e-3)
    values = recovery.field.values[np.linalg.norm(recovery.field.grid.points(), axis=-1) < 0.6]
    assert 0.1 < values[:, 0].mean() < 0.3
    assert values[:, 2].mean() == pytest.approx(values[:, 0].mean(), rel=0.2)
    assert abs(values[:, 1].mean()) < 0.05


def test_interior_of_the_same_metric_is_zero() -> None:
    g = metric_from_id("euclid")
    recovery = recover_metric_interior(g, g, InflowGrid(16, 16), pixel_grid(15))
    assert recovery.sinogram.norm() < 1e-4
    assert np.abs(recovery.field.values).max() < 1e-3


SMALL_PIPELINE = HolderSettings(n_grid=41, n_sources=8, sinogram_grid=16, interior_grid=16, pixels=21, boundary_samples=8)


def test_unknown_pipeline_stage(euclid: CoefficientTriple) -> None:
    settings = replace(SMALL_PIPELINE, stages=("boundary", "bogus"))
    with pytest.raises(ProbeError, match="Unknown pipeline stage"):
        run_pipeline(euclid, euclid, 0.0, settings)


def test_pipeline_without_recovery_stages(euclid: CoefficientTriple) -> None:
    report = run_pipeline(euclid, euclid, 0.0, replace(SMALL_PIPELINE, stages=("boundary",)))
    assert report.estimate is None
    assert all(np.isnan(value) for value in report.errors.values())
    assert report.boundary["stage0"] < 1e-8


def test_pipeline_of_identical_triples(euclid: CoefficientTriple) -> None:
    report = run_pipeline(euclid, euclid, 0.0, replace(SMALL_PIPELINE, stages=("b", "q")))
    assert report.estimate is not None
    assert report.sinograms == {"b": 0.0, "q": 0.0}
    assert report.errors["b"] < 1e-6
    assert report.errors["q"] < 1e-6
    assert np.isnan(report.errors["g"])


def test_pipeline_recovers_a_potential_bump(euclid: CoefficientTriple) -> None:
    t_tilde = euclid.replace(q=ScalarSum([euclid.q, CompactBump(BUMP_CENTER, 0.4)], [1.0, 0.3]), name="euclid+bump")
    report = run_pipeline(euclid, t_tilde, 0.1, replace(SMALL_PIPELINE, stages=("q",)))
    assert report.sinograms["q"] > 0
    assert report.errors["q"] == pytest.approx(gauge_errors(euclid, t_tilde, 41)["q"], rel=0.35)
    assert report.estimate.q is not euclid.q


def test_holder_experiment_measures_the_estimate(euclid: CoefficientTriple) -> None:
    settings = replace(SMALL_PIPELINE, family="potential", epsilons=(0.0, 0.05, 0.1), stages=("q",))
    report = holder_experiment(euclid, settings)
    assert report.deltas[0] == pytest.approx(0.0, abs=1e-12)
    assert report.errors["q"][0] < 1e-6
    assert report.errors["q"][2] > report.errors["q"][1] > 0
    assert np.all(np.isnan(report.errors["g"]))
    assert report.failures == ["exponent fit needs 4 successful ε values, got 2"]
    assert report.config_hash == settings_hash(settings)
