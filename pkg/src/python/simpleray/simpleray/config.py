import hashlib
import logging
import logging.config
import os
import re
import sys
import typing

from simpleray.exceptions import ConfigError
from simpleray.geodesics import InflowGrid
from simpleray.logging import TRACE_LOG_LEVEL
from simpleray.manifold import CoefficientTriple, Domain
from simpleray.registry import triple_from_ids
from simpleray.wavesolver import SolverGrid
from simpleray.wkb import ProbeConfig

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

if typing.TYPE_CHECKING:
    from simpleray_types import RunConfigDict

LOG_LEVELS: typing.Dict[str, int] = {
    "critical": logging.CRITICAL,
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "trace": TRACE_LOG_LEVEL,
}

LOGGING_CONFIG: typing.Dict[str, typing.Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "()": "simpleray.logging.DefaultFormatter",
            "fmt": "%(levelprefix)s %(message)s",
            "use_colors": None,
        },
        "run": {
            "()": "simpleray.logging.RunFormatter",
            "fmt": "%(levelprefix)s %(artifact)s - %(message)s",
        },
    },
    "handlers": {
        "default": {
            "formatter": "default",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
        },
        "run": {
            "formatter": "run",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stdout",
        },
    },
    "loggers": {
        "simpleray": {"handlers": ["default"], "level": "INFO", "propagate": False},
        "simpleray.error": {"level": "INFO"},
        "simpleray.run": {"handlers": ["run"], "level": "INFO", "propagate": False},
    },
}

DATA_DIR_ENV = "SIMPLERAY_DATA_DIR"
TABLES = ("run", "domain", "triple", "reference", "grid", "probe", "dictionary", "thresholds", "experiment")
TRIPLE_KEYS = ("metric", "covector", "potential")

logger = logging.getLogger("simpleray.error")


def default_output_root() -> str:
    return os.environ.get(DATA_DIR_ENV, "runs")


def _decode_error(exc: Exception) -> ConfigError:
    message = str(exc)
    match = re.search(r"line (\d+), column (\d+)", message)
    line = int(match.group(1)) if match else getattr(exc, "lineno", None)
    column = int(match.group(2)) if match else getattr(exc, "colno", None)
    return ConfigError("Invalid TOML: %s" % message.split(" (at ")[0], line, column)


def parse_toml(text: str) -> "RunConfigDict":
    try:
        document = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise _decode_error(exc) from None
    unknown = sorted(set(document) - set(TABLES))
    if unknown:
        msg = "Unknown configuration tables: %s."
        raise ConfigError(msg % ", ".join(unknown))
    return typing.cast("RunConfigDict", document)


class Config:
    def __init__(
        self,
        document: typing.Optional["RunConfigDict"] = None,
        source: str = "",
        path: typing.Optional[str] = None,
        out: typing.Optional[str] = None,
        seed: typing.Optional[int] = None,
        threads: typing.Optional[int] = None,
        log_level: typing.Optional[typing.Union[str, int]] = None,
        log_config: typing.Optional[typing.Dict[str, typing.Any]] = LOGGING_CONFIG,
    ) -> None:
        self.document: typing.Dict[str, typing.Any] = dict(document or {})
        self.source = source
        self.path = path
        run = self.table("run")
        self.out = out or run.get("out") or default_output_root()
        self.seed = int(seed if seed is not None else run.get("seed", 0))
        self.threads = int(threads if threads is not None else run.get("threads", 1))
        self.log_level = log_level if log_level is not None else run.get("log_level")
        self.log_config = log_config
        self.loaded = False

    @classmethod
    def from_file(cls, path: str, **kwargs: typing.Any) -> "Config":
        try:
            with open(path, encoding="utf-8") as stream:
                source = stream.read()
        except OSError as exc:
            msg = "Cannot read configuration %s: %s."
            raise ConfigError(msg % (path, exc.strerror)) from None
        return cls(parse_toml(source), source=source, path=path, **kwargs)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def table(self, name: str) -> typing.Dict[str, typing.Any]:
        value = self.document.get(name, {})
        if not isinstance(value, dict):
            msg = "Configuration entry %r must be a table."
            raise ConfigError(msg % name)
        return value

    def configure_logging(self) -> None:
        logging.addLevelName(TRACE_LOG_LEVEL, "TRACE")

        if self.log_config is not None:
            logging.config.dictConfig(self.log_config)

        if self.log_level is not None:
            if isinstance(self.log_level, str):
                if self.log_level not in LOG_LEVELS:
                    msg = "Unknown log level %r (expected one of %s)."
                    raise ConfigError(msg % (self.log_level, ", ".join(LOG_LEVELS)))
                log_level = LOG_LEVELS[self.log_level]
            else:
                log_level = self.log_level
            logging.getLogger("simpleray").setLevel(log_level)
            logging.getLogger("simpleray.error").setLevel(log_level)
            logging.getLogger("simpleray.run").setLevel(log_level)

    def load(self) -> None:
        assert not self.loaded
        domain = self.table("domain")
        try:
            self.domain = Domain(
                boundary_radius=float(domain.get("boundary_radius", 1.0)),
                extended_radius=float(domain.get("extended_radius", 1.15)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.triple = self._triple("triple", required=False)
        self.reference = self._triple("reference", required=False)
        grid = self.table("grid")
        self.inflow = InflowGrid(
            n_alpha=int(grid.get("n_alpha", 96)),
            n_beta=int(grid.get("n_beta", 96)),
            radius=self.domain.boundary_radius,
        )
        self.pixels = int(grid.get("pixels", 81))
        self.solver = SolverGrid(
            n_r=int(grid.get("n_r", 128)),
            n_theta=int(grid.get("n_theta", 256)),
            T=float(grid.get("T", 1.0)),
            cfl=float(grid.get("cfl", 0.5)),
            radius=self.domain.boundary_radius,
        )
        probe = dict(self.table("probe"))
        if "z0" in probe:
            probe["z0"] = tuple(float(v) for v in probe["z0"])
        try:
            self.probe = ProbeConfig(**probe)
        except TypeError as exc:
            msg = "Invalid [probe] table: %s."
            raise ConfigError(msg % exc) from None
        dictionary = self.table("dictionary")
        self.dictionary = str(dictionary.get("version", "wkb-48"))
        self.engine = str(dictionary.get("engine", "wkb"))
        self.thresholds = self.table("thresholds")
        self.experiment = self.table("experiment")
        self.loaded = True

    def _triple(self, name: str, required: bool) -> typing.Optional[CoefficientTriple]:
        table = self.table(name)
        if not table:
            if required:
                msg = "Missing [%s] table."
                raise ConfigError(msg % name)
            return None
        unknown = sorted(set(table) - set(TRIPLE_KEYS))
        if unknown:
            msg = "Unknown keys in [%s]: %s."
            raise ConfigError(msg % (name, ", ".join(unknown)))
        if "metric" not in table:
            msg = "Missing key %r in [%s]."
            raise ConfigError(msg % ("metric", name))
        base = os.path.dirname(self.path) if self.path else ""

        def resolve(value: str) -> str:
            return os.path.join(base, value) if value.endswith(".grid") and not os.path.isabs(value) else value

        return triple_from_ids(
            resolve(str(table["metric"])),
            resolve(str(table.get("covector", "zero"))),
            resolve(str(table.get("potential", "zero"))),
            domain=self.domain,
        )

    def require_triple(self, name: str = "triple") -> CoefficientTriple:
        if not self.loaded:
            self.load()
        value = getattr(self, name)
        if value is None:
            msg = "Missing [%s] table."
            raise ConfigError(msg % name)
        return value
