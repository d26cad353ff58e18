"""
Built-in analytic coefficient registry.

Ids are short strings such as ``"gauss1"``, ``"conformal:2"``,
``"perturb:7,0.01"`` or ``"rot-bump:0.1,0.2,0.5,0.3"``. Values ending in
``.grid`` are read from grid files.
"""
import logging
import typing

import numpy as np

from simpleray.exceptions import RegistryError
from simpleray.fields import (
    Array,
    CompactBump,
    ConformalMetric,
    ConstantCovector,
    ConstantScalar,
    CovectorField,
    CovectorFunction,
    GaussianBump,
    GradientCovector,
    GridCovectorField,
    GridMetric,
    GridScalarField,
    MetricField,
    PerturbedMetric,
    RotatedGradient,
    ScalarField,
    ScalarFunction,
)
from simpleray.manifold import CoefficientTriple, Domain

logger = logging.getLogger("simpleray.error")

GAUSS1_AMPLITUDE = 0.3
GAUSS1_WIDTH = 0.2
TRAP_AMPLITUDE = 0.9
TRAP_WIDTH = 0.2


def _split(identifier: str) -> typing.Tuple[str, typing.List[float]]:
    name, _, arguments = identifier.partition(":")
    if not arguments:
        return name.strip(), []
    try:
        values = [float(v) for v in arguments.split(",")]
    except ValueError:
        msg = "Malformed registry arguments in %r."
        raise RegistryError(msg % identifier) from None
    return name.strip(), values


def _arity(identifier: str, values: typing.List[float], count: int) -> None:
    if len(values) != count:
        msg = "Registry id %r expects %d arguments, got %d."
        raise RegistryError(msg % (identifier, count, len(values)))


def _lens_factor(amplitude: float, width: float, power: float) -> ScalarField:
    """(1 + a·e^{−|x|²/w})^p with analytic derivatives."""

    def base(x: Array) -> typing.Tuple[Array, Array]:
        e = amplitude * np.exp(-np.sum(x * x, axis=-1) / width)
        return 1.0 + e, e

    def value(x: Array) -> Array:
        s, _ = base(x)
        return s**power

    def grad(x: Array) -> Array:
        s, e = base(x)
        ds = (-2.0 / width) * e[..., None] * x
        return (power * s ** (power - 1))[..., None] * ds

    def hess(x: Array) -> Array:
        s, e = base(x)
        ds = (-2.0 / width) * e[..., None] * x
        dds = (-2.0 / width) * (
            e[..., None, None] * np.eye(2)
            + (-2.0 / width) * e[..., None, None] * x[..., :, None] * x[..., None, :]
        )
        first = (power * (power - 1) * s ** (power - 2))[..., None, None] * (
            ds[..., :, None] * ds[..., None, :]
        )
        return first + (power * s ** (power - 1))[..., None, None] * dds

    return ScalarFunction(value, grad, hess)


def metric_from_id(identifier: str) -> MetricField:
    identifier = identifier.strip()
    if identifier.endswith(".grid"):
        from simpleray.formats import read_grid

        values, bbox = read_grid(identifier)
        return GridMetric(values, bbox, identifier=identifier)
    base_id, _, on = identifier.partition("@")
    name, values = _split(base_id)
    if name == "euclid":
        _arity(identifier, values, 0)
        return ConformalMetric(ConstantScalar(1.0), identifier="euclid")
    if name == "conformal":
        _arity(identifier, values, 1)
        return ConformalMetric(ConstantScalar(values[0] ** 2), identifier=identifier)
    if name == "gauss1":
        _arity(identifier, values, 0)
        factor = _lens_factor(GAUSS1_AMPLITUDE, GAUSS1_WIDTH, 2.0)
        return ConformalMetric(factor, identifier="gauss1")
    if name == "trap":
        _arity(identifier, values, 0)
        factor = _lens_factor(-TRAP_AMPLITUDE, TRAP_WIDTH, -2.0)
        return ConformalMetric(factor, identifier="trap")
    if name == "perturb":
        _arity(identifier, values, 2)
        base = metric_from_id(on) if on else metric_from_id("euclid")
        return PerturbedMetric(base, int(values[0]), values[1], identifier=identifier)
    msg = "Unknown metric registry id %r."
    raise RegistryError(msg % identifier)


def covector_from_id(identifier: str) -> CovectorField:
    identifier = identifier.strip()
    if identifier.endswith(".grid"):
        from simpleray.formats import read_grid

        values, bbox = read_grid(identifier)
        return GridCovectorField(values, bbox)
    name, values = _split(identifier)
    if name == "zero":
        _arity(identifier, values, 0)
        return ConstantCovector((0.0, 0.0))
    if name == "const":
        _arity(identifier, values, 2)
        return ConstantCovector(values)
    if name == "rot-bump":
        _arity(identifier, values, 4)
        x, y, r, amp = values
        return RotatedGradient(CompactBump((x, y), r, amp))
    if name == "grad-bump":
        _arity(identifier, values, 4)
        x, y, r, amp = values
        return GradientCovector(CompactBump((x, y), r, amp))
    if name == "swirl":
        _arity(identifier, values, 1)
        amp = values[0]
        # amp·(y, −x): constant magnetic field −2·amp
        return CovectorFunction(
            lambda p: amp * np.stack([p[..., 1], -p[..., 0]], axis=-1),
            lambda p: amp
            * np.broadcast_to(np.array([[0.0, -1.0], [1.0, 0.0]]), p.shape + (2,)),
            bound=abs(amp) * 1.15,
        )
    msg = "Unknown covector registry id %r."
    raise RegistryError(msg % identifier)


def potential_from_id(identifier: str) -> ScalarField:
    identifier = identifier.strip()
    if identifier.endswith(".grid"):
        from simpleray.formats import read_grid

        values, bbox = read_grid(identifier)
        return GridScalarField(values, bbox)
    name, values = _split(identifier)
    if name == "zero":
        _arity(identifier, values, 0)
        return ConstantScalar(0.0)
    if name == "const":
        _arity(identifier, values, 1)
        return ConstantScalar(values[0])
    if name == "bump":
        _arity(identifier, values, 4)
        x, y, r, amp = values
        return CompactBump((x, y), r, amp)
    if name == "gauss":
        _arity(identifier, values, 4)
        x, y, sigma, amp = values
        return GaussianBump((x, y), sigma, amp)
    msg = "Unknown potential registry id %r."
    raise RegistryError(msg % identifier)


def triple_from_ids(
    metric: str = "euclid",
    covector: str = "zero",
    potential: str = "zero",
    domain: typing.Optional[Domain] = None,
    bound: float = 10.0,
    smoothness_order: int = 4,
) -> CoefficientTriple:
    return CoefficientTriple(
        g=metric_from_id(metric),
        b=covector_from_id(covector),
        q=potential_from_id(potential),
        domain=domain or Domain(),
        name="%s|%s|%s" % (metric, covector, potential),
        bound=bound,
        smoothness_order=smoothness_order,
    )
