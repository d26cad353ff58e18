import numpy as np
import pytest

from simpleray.charts_gauge import GaugeElement, act
from simpleray.exceptions import ProbeError, SolverError
from simpleray.fields import CompactBump
from simpleray.manifold import CoefficientTriple
from simpleray.registry import triple_from_ids
from simpleray.wavesolver import (
    ProbeDictionary,
    SolverGrid,
    dn_operator_gap,
    energy_check,
    fdtd_solve,
    gap_profile,
    record_gap,
    wkb_validity,
)
from simpleray.wkb import ProbeConfig
from tests.constants import LOCAL_PROBE

GRID = SolverGrid(n_r=16, n_theta=32, record_every=5)


def test_grid_geometry() -> None:
    assert GRID.dr == pytest.approx(1 / 16)
    assert GRID.r[-1] == 1.0
    assert GRID.nodes().shape == (17, 32, 2)
    assert np.allclose(np.linalg.norm(GRID.nodes()[-1], axis=-1), 1.0)


def test_time_step_above_the_cfl_bound(euclid: CoefficientTriple) -> None:
    grid = SolverGrid(n_r=16, n_theta=32, dt=0.1)
    with pytest.raises(SolverError):
        grid.resolve_dt(euclid)
    assert GRID.resolve_dt(euclid) == pytest.approx(GRID.stable_dt(euclid))


def test_source_or_local_excitation_is_required(euclid: CoefficientTriple) -> None:
    with pytest.raises(ProbeError):
        fdtd_solve(euclid, None, GRID)


def test_source_must_vanish_initially(euclid: CoefficientTriple) -> None:
    with pytest.raises(ProbeError):
        fdtd_solve(euclid, lambda times, angles: np.ones((len(times), len(angles))), GRID)


def test_zero_source_gives_zero_trace(euclid: CoefficientTriple) -> None:
    history, record = fdtd_solve(euclid, lambda times, angles: np.zeros((len(times), len(angles))), GRID)
    assert np.all(history.trace == 0)
    assert record.source_norm == 0.0
    assert record.provenance == "fdtd"


@pytest.fixture(scope="module")
def local_run():
    euclid = triple_from_ids("euclid")
    probe = ProbeConfig(**LOCAL_PROBE)
    history, record = fdtd_solve(euclid, None, GRID, probe=probe)
    return euclid, history, record


def test_local_excitation_is_causal(local_run) -> None:
    _, history, record = local_run
    early = history.trace_times < 0.24
    assert early.any()
    assert np.all(record.trace[early] == 0)
    assert np.abs(record.trace[~early]).max() > 0
    assert record.trace.shape == (history.steps + 1, GRID.n_theta)


def test_local_excitation_energy_is_bounded(local_run) -> None:
    euclid, history, record = local_run
    report = energy_check(history, euclid, record.source_norm)
    assert report.lhs > 0
    assert not report.violated
    assert len(report.profile) == len(history.times)


def test_record_gap_of_itself(local_run) -> None:
    _, _, record = local_run
    assert record_gap(record, record) == 0.0


@pytest.mark.parametrize("version, size", [("fdtd-24", 24), ("wkb-48", 48)])
def test_dictionary_sizes(version: str, size: int) -> None:
    dictionary = ProbeDictionary.build(version)
    assert len(dictionary) == size
    assert dictionary.version == version
    for probe in dictionary.probes:
        probe.check()


def test_wkb_dictionary_sources_sit_outside_the_disk() -> None:
    fan = [p for p in ProbeDictionary.build("wkb-48").probes if p.kind == "global"]
    assert len(fan) == 24
    assert np.allclose([np.hypot(*p.z0) for p in fan], 1.1)


def test_unknown_dictionary() -> None:
    with pytest.raises(ProbeError, match="Unknown probe dictionary"):
        ProbeDictionary.build("v9")


def test_dn_gap_of_identical_triples(lens: CoefficientTriple) -> None:
    result = dn_operator_gap(lens, lens, [ProbeConfig(lam=16.0)])
    assert result.delta == 0.0
    assert result.failures == 0
    assert result.version == "custom"


def test_dn_gap_counts_failed_records(euclid: CoefficientTriple) -> None:
    result = dn_operator_gap(euclid, euclid, [ProbeConfig()], engine="bogus")
    assert result.failures == 1
    assert np.isnan(result.delta)
    assert np.isnan(result.gaps[0])


def test_gap_grows_with_the_window(euclid: CoefficientTriple) -> None:
    wider = triple_from_ids("conformal:1.1")
    profile = gap_profile(euclid, wider, [ProbeConfig(lam=16.0)], windows=(1.0, 0.4, 0.6))
    assert profile.windows.tolist() == [0.4, 0.6, 1.0]
    assert profile.monotone
    assert profile.deltas[-1] > 0
    assert profile.deltas[-1] == pytest.approx(dn_operator_gap(euclid, wider, [ProbeConfig(lam=16.0)]).delta)


def test_gauge_invariance_improves_with_the_grid() -> None:
    t = triple_from_ids("euclid", "swirl:0.2")
    gauged = act(GaugeElement.from_theta(CompactBump((0.55, 0.0), 0.35, amplitude=0.5), t.domain), t)
    probe = ProbeConfig(lam=8.0)
    gaps = []
    for n_r, n_theta in ((24, 96), (48, 192)):
        grid = SolverGrid(n_r=n_r, n_theta=n_theta, T=1.5, record_every=50)
        _, first = fdtd_solve(t, None, grid, probe=probe)
        _, second = fdtd_solve(gauged, None, grid, probe=probe)
        gaps.append(record_gap(first, second) / first.l2_norm())
    assert gaps[1] < 0.05
    assert gaps[1] < 0.5 * gaps[0]


def test_wkb_remainder_shrinks_with_frequency(euclid: CoefficientTriple) -> None:
    grid = SolverGrid(n_r=96, n_theta=384, T=1.0, record_every=500)
    report = wkb_validity(euclid, ProbeConfig(), (4.0, 8.0), grid)
    assert report.gaps.shape == (2,)
    assert np.all(report.gaps > 0)
    assert report.gaps[1] < report.gaps[0]
    assert report.slope < 0


def test_wkb_validity_needs_two_frequencies(euclid: CoefficientTriple) -> None:
    with pytest.raises(ProbeError, match="at least two frequencies"):
        wkb_validity(euclid, ProbeConfig(), (8.0,), GRID)
