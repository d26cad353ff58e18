"""
Vectorised coefficient fields on the extended disk.

Every field evaluates on arrays of points shaped ``(..., 2)``. Derivatives are
analytic where a closed form exists and central differences otherwise.
"""
import typing

import numpy as np
from numpy.typing import NDArray
from scipy.interpolate import RectBivariateSpline

Array = NDArray[np.float64]

FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4

_UNIT = np.eye(2)


def _partials(func: typing.Callable[[Array], Array], x: Array, step: float) -> Array:
    x = np.asarray(x, dtype=float)
    axis = x.ndim - 1
    columns = []
    for k in range(2):
        shift = step * _UNIT[k]
        columns.append((func(x + shift) - func(x - shift)) / (2.0 * step))
    return np.stack(columns, axis=axis)


class ScalarField:
    """Real function, ``eval`` returns ``(...)``."""

    order = 0
    bound: float = 1.0

    def eval(self, x: Array) -> Array:
        raise NotImplementedError()  # pragma: no cover

    def grad(self, x: Array) -> Array:
        return _partials(self.eval, x, FD_STEP)

    def hess(self, x: Array) -> Array:
        return _partials(self.grad, x, FD_STEP_SECOND)

    def __call__(self, x: Array) -> Array:
        return self.eval(np.asarray(x, dtype=float))


class CovectorField:
    """One-form b_j dx^j, ``jacobian`` returns ``∂_k b_j`` as ``(..., k, j)``."""

    order = 1
    bound: float = 1.0

    def eval(self, x: Array) -> Array:
        raise NotImplementedError()  # pragma: no cover

    def jacobian(self, x: Array) -> Array:
        return _partials(self.eval, x, FD_STEP)

    def __call__(self, x: Array) -> Array:
        return self.eval(np.asarray(x, dtype=float))


class VectorField:
    """Contravariant field v^i, ``jacobian`` returns ``∂_k v^i`` as ``(..., k, i)``."""

    def eval(self, x: Array) -> Array:
        raise NotImplementedError()  # pragma: no cover

    def jacobian(self, x: Array) -> Array:
        return _partials(self.eval, x, FD_STEP)

    def __call__(self, x: Array) -> Array:
        return self.eval(np.asarray(x, dtype=float))


class TensorField2:
    """Symmetric covariant 2-tensor f_ij dx^i dx^j."""

    order = 2

    def eval(self, x: Array) -> Array:
        raise NotImplementedError()  # pragma: no cover

    def __call__(self, x: Array) -> Array:
        return self.eval(np.asarray(x, dtype=float))


class MetricField(TensorField2):
    """
    Riemannian metric. ``grad`` returns ``∂_k g_ij`` as ``(..., k, i, j)`` and
    ``hess`` returns ``∂_k ∂_l g_ij`` as ``(..., k, l, i, j)``.
    """

    smoothness_order: int = 4
    identifier: str = "metric"

    def grad(self, x: Array) -> Array:
        return _partials(self.eval, x, FD_STEP)

    def hess(self, x: Array) -> Array:
        return _partials(self.grad, x, FD_STEP_SECOND)

    def inverse(self, x: Array) -> Array:
        return np.linalg.inv(self.eval(x))

    def det(self, x: Array) -> Array:
        return np.linalg.det(self.eval(x))


# Scalars


class ConstantScalar(ScalarField):
    def __init__(self, value: float) -> None:
        self.value = float(value)
        self.bound = abs(self.value)

    def eval(self, x: Array) -> Array:
        return np.full(np.shape(x)[:-1], self.value)

    def grad(self, x: Array) -> Array:
        return np.zeros(np.shape(x))

    def hess(self, x: Array) -> Array:
        return np.zeros(np.shape(x) + (2,))


class GaussianBump(ScalarField):
    """amplitude · exp(−|x − c|² / (2σ²))"""

    def __init__(
        self, center: typing.Sequence[float], sigma: float, amplitude: float = 1.0
    ) -> None:
        self.center = np.asarray(center, dtype=float)
        self.sigma = float(sigma)
        self.amplitude = float(amplitude)
        self.bound = abs(self.amplitude)

    def eval(self, x: Array) -> Array:
        d = np.asarray(x) - self.center
        return self.amplitude * np.exp(-np.sum(d * d, axis=-1) / (2 * self.sigma**2))

    def grad(self, x: Array) -> Array:
        d = np.asarray(x) - self.center
        return -(self.eval(x) / self.sigma**2)[..., None] * d

    def hess(self, x: Array) -> Array:
        d = np.asarray(x) - self.center
        s2 = self.sigma**2
        outer = d[..., :, None] * d[..., None, :] / s2**2 - _UNIT / s2
        return self.eval(x)[..., None, None] * outer


class CompactBump(ScalarField):
    """amplitude · (1 − |x − c|²/r²)⁴ inside the disk of radius r, C³ across its rim."""

    def __init__(
        self, center: typing.Sequence[float], radius: float, amplitude: float = 1.0
    ) -> None:
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        self.bound = abs(self.amplitude)

    def _parts(self, x: Array) -> typing.Tuple[Array, Array]:
        d = np.asarray(x) - self.center
        w = np.clip(1.0 - np.sum(d * d, axis=-1) / self.radius**2, 0.0, None)
        return d, w

    def eval(self, x: Array) -> Array:
        _, w = self._parts(x)
        return self.amplitude * w**4

    def grad(self, x: Array) -> Array:
        d, w = self._parts(x)
        return (self.amplitude * 4 * w**3 * (-2.0 / self.radius**2))[..., None] * d

    def hess(self, x: Array) -> Array:
        d, w = self._parts(x)
        r2 = self.radius**2
        outer = d[..., :, None] * d[..., None, :]
        first = (12 * w**2 * 4.0 / r2**2)[..., None, None] * outer
        second = (4 * w**3 * (-2.0 / r2))[..., None, None] * _UNIT
        return self.amplitude * (first + second)


class ScalarFunction(ScalarField):
    """Wraps plain callables; derivatives default to central differences."""

    def __init__(
        self,
        func: typing.Callable[[Array], Array],
        grad: typing.Optional[typing.Callable[[Array], Array]] = None,
        hess: typing.Optional[typing.Callable[[Array], Array]] = None,
        bound: float = 1.0,
    ) -> None:
        self.func = func
        self.grad_func = grad
        self.hess_func = hess
        self.bound = bound

    def eval(self, x: Array) -> Array:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x: Array) -> Array:
        if self.grad_func is None:
            return super().grad(x)
        return np.asarray(self.grad_func(np.asarray(x, dtype=float)), dtype=float)

    def hess(self, x: Array) -> Array:
        if self.hess_func is None:
            return super().hess(x)
        return np.asarray(self.hess_func(np.asarray(x, dtype=float)), dtype=float)


class ScalarSum(ScalarField):
    def __init__(
        self, terms: typing.Sequence[ScalarField], weights: typing.Sequence[float]
    ) -> None:
        self.terms = list(terms)
        self.weights = [float(w) for w in weights]
        self.bound = sum(abs(w) * t.bound for t, w in zip(self.terms, self.weights))

    def eval(self, x: Array) -> Array:
        return sum(w * t.eval(x) for t, w in zip(self.terms, self.weights))

    def grad(self, x: Array) -> Array:
        return sum(w * t.grad(x) for t, w in zip(self.terms, self.weights))

    def hess(self, x: Array) -> Array:
        return sum(w * t.hess(x) for t, w in zip(self.terms, self.weights))


# Covectors and vectors


class ConstantCovector(CovectorField):
    def __init__(self, value: typing.Sequence[float]) -> None:
        self.value = np.asarray(value, dtype=float)
        self.bound = float(np.abs(self.value).max())

    def eval(self, x: Array) -> Array:
        return np.broadcast_to(self.value, np.shape(x)).copy()

    def jacobian(self, x: Array) -> Array:
        return np.zeros(np.shape(x) + (2,))


class RotatedGradient(CovectorField):
    """b = (∂_y ψ, −∂_x ψ): divergence free in the Euclidean sense."""

    def __init__(self, potential: ScalarField, scale: float = 1.0) -> None:
        self.potential = potential
        self.scale = float(scale)
        self.bound = potential.bound

    def eval(self, x: Array) -> Array:
        g = self.potential.grad(x)
        return self.scale * np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def jacobian(self, x: Array) -> Array:
        h = self.potential.hess(x)
        return self.scale * np.stack([h[..., :, 1], -h[..., :, 0]], axis=-1)


class GradientCovector(CovectorField):
    """b = dh."""

    def __init__(self, potential: ScalarField, scale: float = 1.0) -> None:
        self.potential = potential
        self.scale = float(scale)
        self.bound = potential.bound

    def eval(self, x: Array) -> Array:
        return self.scale * self.potential.grad(x)

    def jacobian(self, x: Array) -> Array:
        return self.scale * self.potential.hess(x)


class CovectorFunction(CovectorField):
    def __init__(
        self,
        func: typing.Callable[[Array], Array],
        jacobian: typing.Optional[typing.Callable[[Array], Array]] = None,
        bound: float = 1.0,
    ) -> None:
        self.func = func
        self.jacobian_func = jacobian
        self.bound = bound

    def eval(self, x: Array) -> Array:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x: Array) -> Array:
        if self.jacobian_func is None:
            return super().jacobian(x)
        return np.asarray(self.jacobian_func(np.asarray(x, dtype=float)), dtype=float)


class CovectorSum(CovectorField):
    def __init__(
        self, terms: typing.Sequence[CovectorField], weights: typing.Sequence[float]
    ) -> None:
        self.terms = list(terms)
        self.weights = [float(w) for w in weights]
        self.bound = sum(abs(w) * t.bound for t, w in zip(self.terms, self.weights))

    def eval(self, x: Array) -> Array:
        return sum(w * t.eval(x) for t, w in zip(self.terms, self.weights))

    def jacobian(self, x: Array) -> Array:
        return sum(w * t.jacobian(x) for t, w in zip(self.terms, self.weights))


class VectorFunction(VectorField):
    def __init__(
        self,
        func: typing.Callable[[Array], Array],
        jacobian: typing.Optional[typing.Callable[[Array], Array]] = None,
    ) -> None:
        self.func = func
        self.jacobian_func = jacobian

    def eval(self, x: Array) -> Array:
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x: Array) -> Array:
        if self.jacobian_func is None:
            return super().jacobian(x)
        return np.asarray(self.jacobian_func(np.asarray(x, dtype=float)), dtype=float)


class BumpVector(VectorField):
    """v = ψ(x)·(a, b) with ψ a compact bump, so v vanishes outside its support."""

    def __init__(self, bump: ScalarField, direction: typing.Sequence[float]) -> None:
        self.bump = bump
        self.direction = np.asarray(direction, dtype=float)

    def eval(self, x: Array) -> Array:
        return self.bump.eval(x)[..., None] * self.direction

    def jacobian(self, x: Array) -> Array:
        return self.bump.grad(x)[..., :, None] * self.direction


# Symmetric tensors and metrics


class TensorFunction(TensorField2):
    def __init__(self, func: typing.Callable[[Array], Array]) -> None:
        self.func = func

    def eval(self, x: Array) -> Array:
        value = np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)
        return 0.5 * (value + np.swapaxes(value, -1, -2))


class BumpTensor(TensorField2):
    """ψ(x)·S with S a fixed symmetric matrix."""

    def __init__(self, bump: ScalarField, matrix: typing.Sequence[typing.Sequence[float]]) -> None:
        self.bump = bump
        matrix = np.asarray(matrix, dtype=float)
        self.matrix = 0.5 * (matrix + matrix.T)

    def eval(self, x: Array) -> Array:
        return self.bump.eval(x)[..., None, None] * self.matrix


class ConformalMetric(MetricField):
    """g = e(x)·δ with e a positive scalar factor."""

    def __init__(self, factor: ScalarField, identifier: str = "conformal") -> None:
        self.factor = factor
        self.identifier = identifier

    def eval(self, x: Array) -> Array:
        return self.factor.eval(x)[..., None, None] * _UNIT

    def grad(self, x: Array) -> Array:
        return self.factor.grad(x)[..., None, None] * _UNIT

    def hess(self, x: Array) -> Array:
        return self.factor.hess(x)[..., None, None] * _UNIT


class PerturbedMetric(MetricField):
    """
    base + ε·S(x), where S is a seeded sum of smooth symmetric trigonometric
    modes normalised to unit sup-norm on the extended disk.
    """

    modes = 4

    def __init__(
        self,
        base: MetricField,
        seed: int,
        epsilon: float,
        identifier: typing.Optional[str] = None,
    ) -> None:
        self.base = base
        self.seed = int(seed)
        self.epsilon = float(epsilon)
        self.identifier = identifier or "perturb:%d,%g" % (seed, epsilon)
        rng = np.random.default_rng(self.seed)
        self.wavevectors = rng.uniform(-2.0, 2.0, size=(self.modes, 2))
        self.phases = rng.uniform(0.0, 2 * np.pi, size=self.modes)
        coefficients = rng.normal(size=(self.modes, 2, 2))
        coefficients = 0.5 * (coefficients + np.swapaxes(coefficients, -1, -2))
        scale = np.abs(coefficients).sum(axis=0).max()
        self.coefficients = coefficients / scale

    def _angles(self, x: Array) -> Array:
        return np.asarray(x) @ self.wavevectors.T + self.phases

    def eval(self, x: Array) -> Array:
        c = np.cos(self._angles(x))
        return self.base.eval(x) + self.epsilon * np.einsum(
            "...m,mij->...ij", c, self.coefficients
        )

    def grad(self, x: Array) -> Array:
        s = np.sin(self._angles(x))
        return self.base.grad(x) - self.epsilon * np.einsum(
            "...m,mk,mij->...kij", s, self.wavevectors, self.coefficients
        )

    def hess(self, x: Array) -> Array:
        c = np.cos(self._angles(x))
        return self.base.hess(x) - self.epsilon * np.einsum(
            "...m,mk,ml,mij->...klij", c, self.wavevectors, self.wavevectors, self.coefficients
        )


class BlendedMetric(MetricField):
    """g_a + w·(g_b − g_a) for a scalar weight w."""

    def __init__(
        self,
        first: MetricField,
        second: MetricField,
        weight: ScalarField,
        identifier: str = "blend",
    ) -> None:
        self.first = first
        self.second = second
        self.weight = weight
        self.identifier = identifier

    def eval(self, x: Array) -> Array:
        ga = self.first.eval(x)
        return ga + self.weight.eval(x)[..., None, None] * (self.second.eval(x) - ga)

    def grad(self, x: Array) -> Array:
        diff = self.second.eval(x) - self.first.eval(x)
        dga = self.first.grad(x)
        ddiff = self.second.grad(x) - dga
        w = self.weight.eval(x)
        dw = self.weight.grad(x)
        return dga + dw[..., :, None, None] * diff[..., None, :, :] + w[..., None, None, None] * ddiff

    def hess(self, x: Array) -> Array:
        diff = self.second.eval(x) - self.first.eval(x)
        ddiff = self.second.grad(x) - self.first.grad(x)
        hdiff = self.second.hess(x) - self.first.hess(x)
        w = self.weight.eval(x)
        dw = self.weight.grad(x)
        hw = self.weight.hess(x)
        return (
            self.first.hess(x)
            + hw[..., :, :, None, None] * diff[..., None, None, :, :]
            + dw[..., :, None, None, None] * ddiff[..., None, :, :, :]
            + dw[..., None, :, None, None] * ddiff[..., :, None, :, :]
            + w[..., None, None, None, None] * hdiff
        )


class MetricPlusTensor(MetricField):
    """g + ε·f for a symmetric tensor bump f; derivatives of f by differences."""

    def __init__(
        self, base: MetricField, tensor: TensorField2, epsilon: float, identifier: str = "metric+tensor"
    ) -> None:
        self.base = base
        self.tensor = tensor
        self.epsilon = float(epsilon)
        self.identifier = identifier

    def eval(self, x: Array) -> Array:
        return self.base.eval(x) + self.epsilon * self.tensor.eval(x)


class MetricDifference(TensorField2):
    """g − g₀ as a symmetric tensor field."""

    def __init__(self, metric: MetricField, reference: MetricField) -> None:
        self.metric = metric
        self.reference = reference

    def eval(self, x: Array) -> Array:
        return self.metric.eval(x) - self.reference.eval(x)


# Grid-sampled fields


class GridSampler:
    """
    Bicubic interpolation of a component stack sampled on a uniform Cartesian
    grid. ``values`` has shape ``(ny, nx, *components)``.
    """

    def __init__(self, values: Array, bbox: typing.Sequence[float]) -> None:
        values = np.asarray(values, dtype=float)
        self.values = values
        self.bbox = tuple(float(v) for v in bbox)
        xmin, xmax, ymin, ymax = self.bbox
        ny, nx = values.shape[:2]
        self.xs = np.linspace(xmin, xmax, nx)
        self.ys = np.linspace(ymin, ymax, ny)
        self.component_shape = values.shape[2:]
        flat = values.reshape(ny, nx, -1)
        self.splines = [
            RectBivariateSpline(self.ys, self.xs, flat[:, :, c], kx=3, ky=3)
            for c in range(flat.shape[2])
        ]

    def __call__(self, x: Array, dx: int = 0, dy: int = 0) -> Array:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        px = x[..., 0].ravel()
        py = x[..., 1].ravel()
        out = np.stack([s.ev(py, px, dx=dy, dy=dx) for s in self.splines], axis=-1)
        return out.reshape(shape + self.component_shape)


class GridScalarField(ScalarField):
    def __init__(self, values: Array, bbox: typing.Sequence[float]) -> None:
        self.sampler = GridSampler(values, bbox)
        self.bound = float(np.abs(self.sampler.values).max())

    def eval(self, x: Array) -> Array:
        return self.sampler(x)

    def grad(self, x: Array) -> Array:
        return np.stack([self.sampler(x, dx=1), self.sampler(x, dy=1)], axis=-1)

    def hess(self, x: Array) -> Array:
        hxx = self.sampler(x, dx=2)
        hxy = self.sampler(x, dx=1, dy=1)
        hyy = self.sampler(x, dy=2)
        return np.stack(
            [np.stack([hxx, hxy], axis=-1), np.stack([hxy, hyy], axis=-1)], axis=-2
        )


class GridCovectorField(CovectorField):
    def __init__(self, values: Array, bbox: typing.Sequence[float]) -> None:
        self.sampler = GridSampler(values, bbox)
        self.bound = float(np.abs(self.sampler.values).max())

    def eval(self, x: Array) -> Array:
        return self.sampler(x)

    def jacobian(self, x: Array) -> Array:
        return np.stack([self.sampler(x, dx=1), self.sampler(x, dy=1)], axis=-2)


class GridTensorField(TensorField2):
    def __init__(self, values: Array, bbox: typing.Sequence[float]) -> None:
        self.sampler = GridSampler(values, bbox)

    def eval(self, x: Array) -> Array:
        return self.sampler(x)


class GridMetric(MetricField):
    def __init__(
        self, values: Array, bbox: typing.Sequence[float], identifier: str = "grid"
    ) -> None:
        self.sampler = GridSampler(values, bbox)
        self.identifier = identifier

    def eval(self, x: Array) -> Array:
        return self.sampler(x)

    def grad(self, x: Array) -> Array:
        return np.stack([self.sampler(x, dx=1), self.sampler(x, dy=1)], axis=-3)

    def hess(self, x: Array) -> Array:
        hxx = self.sampler(x, dx=2)
        hxy = self.sampler(x, dx=1, dy=1)
        hyy = self.sampler(x, dy=2)
        return np.stack(
            [np.stack([hxx, hxy], axis=-3), np.stack([hxy, hyy], axis=-3)], axis=-4
        )


def sample_on_grid(
    field: typing.Callable[[Array], Array], n: int, radius: float
) -> typing.Tuple[Array, typing.Tuple[float, float, float, float]]:
    """Sample a field on the ``n × n`` grid over ``[−radius, radius]²``."""
    axis = np.linspace(-radius, radius, n)
    xx, yy = np.meshgrid(axis, axis)
    points = np.stack([xx, yy], axis=-1)
    return np.asarray(field(points)), (-radius, radius, -radius, radius)


# Cutoff profiles


def smoothstep(x: Array) -> typing.Tuple[Array, Array, Array]:
    """
    C³ step S(x) = 35x⁴ − 84x⁵ + 70x⁶ − 20x⁷ on [0, 1], clamped outside,
    with its first two derivatives.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    value = x**4 * (35.0 - 84.0 * x + 70.0 * x**2 - 20.0 * x**3)
    first = 140.0 * x**3 * (1.0 - x) ** 3
    second = 420.0 * x**2 * (1.0 - x) ** 2 * (1.0 - 2.0 * x)
    return value, first, second


def cutoff(u: Array) -> typing.Tuple[Array, Array, Array]:
    """
    ψ(u) = 1 on [0, ½], 1 − S(2u − 1) on [½, 1] and 0 beyond, for u ≥ 0.
    Returns ψ, ψ′ and ψ″.
    """
    value, first, second = smoothstep(2.0 * np.asarray(u, dtype=float) - 1.0)
    return 1.0 - value, -2.0 * first, -4.0 * second
