import pytest

from simpleray.config import LOGGING_CONFIG
from simpleray.geodesics import InflowGrid
from simpleray.manifold import CoefficientTriple
from simpleray.registry import triple_from_ids

# See: https://github.com/encode/uvicorn/blob/6496e6c1e3647c852bf993f7d62f2c65f9a8c2f5/tests/conftest.py#LL18-L26C61  # noqa: E501
LOGGING_CONFIG["loggers"]["simpleray"]["propagate"] = True
LOGGING_CONFIG["loggers"]["simpleray.run"]["propagate"] = True


@pytest.fixture(scope="session")
def euclid() -> CoefficientTriple:
    return triple_from_ids("euclid")


@pytest.fixture(scope="session")
def lens() -> CoefficientTriple:
    return triple_from_ids("gauss1", "swirl:0.2", "gauss:0.1,0.1,0.3,0.5")


@pytest.fixture(scope="session", params=["euclid", "conformal:1.3", "gauss1"])
def metric_id(request) -> str:
    return request.param


@pytest.fixture
def small_inflow() -> InflowGrid:
    return InflowGrid(n_alpha=12, n_beta=9)


@pytest.fixture
def anyio_backend() -> str:
    return "asyncio"
