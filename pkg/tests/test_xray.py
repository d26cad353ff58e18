import numpy as np
import pytest

from simpleray.fields import (
    BumpTensor,
    BumpVector,
    CompactBump,
    ConstantScalar,
    GradientCovector,
    RotatedGradient,
    VectorFunction,
)
from simpleray.geodesics import InflowGrid
from simpleray.manifold import CoefficientTriple
from simpleray.registry import metric_from_id
from simpleray.xray import (
    PixelField,
    RayTable,
    adjoint_xray,
    boundedness_ratio,
    field_inner,
    field_norm,
    invert_xray,
    pack,
    pixel_grid,
    sample_pixels,
    simpson_weights,
    solenoidal_project,
    sym_diff,
    unpack,
    xray,
)
from tests.utils import disk_points


@pytest.fixture(scope="module")
def table() -> RayTable:
    return RayTable.trace(metric_from_id("euclid"), InflowGrid(12, 9))


def test_constant_function_gives_chord_lengths(euclid: CoefficientTriple, table: RayTable) -> None:
    sinogram = xray(euclid.g, ConstantScalar(1.0), table.grid, table=table)
    expected = 2 * np.cos(table.grid.beta)[None, :] * np.ones(table.grid.shape)
    assert sinogram.valid.all()
    assert sinogram.tensor_order == 0
    assert np.allclose(sinogram.values, expected, atol=1e-6)


def test_potential_one_forms_are_invisible(euclid: CoefficientTriple, table: RayTable) -> None:
    dh = GradientCovector(CompactBump((0.1, -0.2), 0.5))
    sinogram = xray(euclid.g, dh, table.grid, table=table)
    assert sinogram.tensor_order == 1
    assert np.allclose(sinogram.values, 0.0, atol=1e-6)


def test_potential_tensors_are_invisible(euclid: CoefficientTriple, table: RayTable) -> None:
    v = BumpVector(CompactBump((0.0, 0.2), 0.5), (1.0, -0.5))
    sinogram = xray(euclid.g, sym_diff(euclid.g, v), table.grid, table=table)
    assert sinogram.tensor_order == 2
    assert np.allclose(sinogram.values, 0.0, atol=1e-6)


def test_simpson_weights_integrate_the_ray_length() -> None:
    weights = simpson_weights(11, 0.1, 0.03)
    assert weights.sum() == pytest.approx(1.03)


def test_sym_diff_of_the_position_field(euclid: CoefficientTriple) -> None:
    v = VectorFunction(lambda p: p, lambda p: np.broadcast_to(np.eye(2), p.shape + (2,)))
    tensor = sym_diff(euclid.g, v)(disk_points())
    assert np.allclose(tensor, np.eye(2))


def test_pack_tensor_components() -> None:
    tensor = np.array([[[1.0, 2.0], [2.0, 3.0]]])
    packed = pack(tensor, 2)
    assert packed.tolist() == [[1.0, 2.0, 3.0]]
    assert np.array_equal(unpack(packed, 2), tensor)


def test_projection_removes_a_gradient(euclid: CoefficientTriple) -> None:
    grid = pixel_grid(41)
    f = sample_pixels(GradientCovector(CompactBump((0.0, 0.0), 0.6)), grid)
    result = solenoidal_project(euclid.g, f)
    assert field_norm(euclid.g, result.solenoidal) < 0.1 * field_norm(euclid.g, f)
    assert result.divergence_residual < 1e-6
    assert result.orthogonality < 1e-3
    assert result.iterations > 0
    assert result.potential.order == 0


def test_projection_of_zero(euclid: CoefficientTriple) -> None:
    grid = pixel_grid(21)
    f = sample_pixels(GradientCovector(ConstantScalar(0.0)), grid)
    result = solenoidal_project(euclid.g, f)
    assert np.all(result.solenoidal.values == 0)
    assert result.divergence_residual == 0.0


BUMP = CompactBump((0.1, -0.15), 0.55)
FIELDS = [
    pytest.param(BUMP, id="scalar"),
    pytest.param(RotatedGradient(BUMP), id="covector"),
    pytest.param(BumpTensor(BUMP, [[1.0, 0.3], [0.3, 0.6]]), id="tensor"),
]


@pytest.fixture(scope="module")
def lens_table() -> RayTable:
    return RayTable.trace(metric_from_id("gauss1"), InflowGrid(64, 64))


@pytest.mark.parametrize("f", FIELDS)
def test_adjoint_pairs_with_the_transform(lens_table: RayTable, f) -> None:
    g = metric_from_id("gauss1")
    sinogram = xray(g, f, lens_table.grid, table=lens_table)
    adjoint = adjoint_xray(g, sinogram, grid=pixel_grid(41), n_directions=32)
    assert not adjoint.undersampled
    assert adjoint.field.order == f.order
    pairing = field_inner(g, sample_pixels(f, pixel_grid(41)), adjoint.field)
    assert pairing == pytest.approx(sinogram.norm() ** 2, rel=0.05)


def test_adjoint_flags_a_coarse_sinogram(euclid: CoefficientTriple, table: RayTable) -> None:
    sinogram = xray(euclid.g, BUMP, table.grid, table=table)
    assert adjoint_xray(euclid.g, sinogram, grid=pixel_grid(11), n_directions=8).undersampled


@pytest.mark.parametrize("metric", ["euclid", "gauss1"])
@pytest.mark.parametrize("f", FIELDS)
def test_inversion_reproduces_the_solenoidal_part(metric: str, f) -> None:
    g = metric_from_id(metric)
    pixels = pixel_grid(21)
    grid = InflowGrid(48, 48)
    table = RayTable.trace(g, grid)
    result = invert_xray(g, xray(g, f, grid, table=table), grid=pixels, table=table)
    truth = sample_pixels(f, pixels)
    if f.order >= 1:
        truth = solenoidal_project(g, truth).solenoidal
        assert result.projection is not None
    error = PixelField(pixels, result.field.values - truth.values, f.order)
    assert result.diagnostics["final_residual"] < 0.1
    assert field_norm(g, error) < 0.5 * field_norm(g, truth)


@pytest.mark.parametrize("f", FIELDS)
def test_transform_bound_is_stable_under_refinement(f) -> None:
    g = metric_from_id("gauss1")
    coarse = boundedness_ratio(g, f, InflowGrid(32, 32))
    fine = boundedness_ratio(g, f, InflowGrid(64, 64))
    assert 0.0 < fine < 2 * np.pi
    assert coarse == pytest.approx(fine, rel=0.05)
