import sys
from typing import Dict, List, Union

from typing_extensions import NotRequired

if sys.version_info >= (3, 8):  # pragma: no cover
    from typing import Literal, TypedDict
else:  # pragma: no cover
    from typing_extensions import Literal, TypedDict


__all__ = (
    "LogLevel",
    "EngineName",
    "FamilyName",
    "RunTable",
    "DomainTable",
    "TripleTable",
    "GridTable",
    "ProbeTable",
    "DictionaryTable",
    "ThresholdsTable",
    "ExperimentTable",
    "RunConfigDict",
    "ArtifactEntry",
    "Manifest",
    "GapReport",
    "BoundaryJetReport",
    "SinogramReport",
    "InversionReport",
    "ExperimentReportDict",
    "Report",
)

LogLevel = Literal["critical", "error", "warning", "info", "debug", "trace"]
EngineName = Literal["wkb", "fdtd"]
FamilyName = Literal["mixed", "metric", "covector", "potential", "gauge"]


class RunTable(TypedDict):
    seed: NotRequired[int]
    out: NotRequired[str]
    threads: NotRequired[int]
    log_level: NotRequired[LogLevel]


class DomainTable(TypedDict):
    boundary_radius: NotRequired[float]
    extended_radius: NotRequired[float]


class TripleTable(TypedDict):
    metric: str
    covector: NotRequired[str]
    potential: NotRequired[str]


class GridTable(TypedDict):
    n_alpha: NotRequired[int]
    n_beta: NotRequired[int]
    pixels: NotRequired[int]
    n_r: NotRequired[int]
    n_theta: NotRequired[int]
    T: NotRequired[float]
    cfl: NotRequired[float]


class ProbeTable(TypedDict):
    kind: NotRequired[Literal["local", "global"]]
    lam: NotRequired[float]
    t0: NotRequired[float]
    x0: NotRequired[float]
    omega: NotRequired[float]
    eps: NotRequired[float]
    z0: NotRequired[List[float]]
    theta0: NotRequired[float]
    order: NotRequired[int]
    t_end: NotRequired[float]
    window: NotRequired[float]
    profile: NotRequired[str]


class DictionaryTable(TypedDict):
    version: NotRequired[Literal["fdtd-24", "wkb-48"]]
    engine: NotRequired[EngineName]


class ThresholdsTable(TypedDict):
    condition_limit: NotRequired[float]
    c_kappa: NotRequired[float]
    c_one: NotRequired[float]
    energy_constant: NotRequired[float]


class ExperimentTable(TypedDict):
    family: NotRequired[FamilyName]
    epsilons: NotRequired[List[float]]
    stages: NotRequired[List[str]]
    M: NotRequired[float]
    mu: NotRequired[float]
    noise: NotRequired[List[float]]


class RunConfigDict(TypedDict):
    run: NotRequired[RunTable]
    domain: NotRequired[DomainTable]
    triple: NotRequired[TripleTable]
    reference: NotRequired[TripleTable]
    grid: NotRequired[GridTable]
    probe: NotRequired[ProbeTable]
    dictionary: NotRequired[DictionaryTable]
    thresholds: NotRequired[ThresholdsTable]
    experiment: NotRequired[ExperimentTable]


class ArtifactEntry(TypedDict):
    path: str
    kind: str
    sha256: str


class Manifest(TypedDict):
    command: str
    config_sha256: str
    seed: int
    versions: Dict[str, str]
    wall_time: float
    artifacts: List[ArtifactEntry]


class GapReport(TypedDict):
    delta: float
    gaps: List[float]
    failures: int
    dictionary: str
    engine: EngineName
    T: float


class BoundaryJetReport(TypedDict):
    samples: int
    flagged: int
    residuals: Dict[str, float]
    errors: NotRequired[Dict[str, float]]


class SinogramReport(TypedDict):
    order: int
    norm: float
    valid: int
    flagged: NotRequired[int]


class InversionReport(TypedDict):
    iterations: int
    converged: bool
    residual: float
    diagnostics: Dict[str, float]


class ExperimentReportDict(TypedDict):
    family: FamilyName
    epsilons: List[float]
    deltas: List[float]
    errors: Dict[str, List[float]]
    exponents: Dict[str, float]
    bands: Dict[str, List[float]]
    failures: List[str]
    dictionary: str
    config_hash: str
    caveat: str


Report = Dict[str, Union[float, int, str, bool, List[float], Dict[str, float]]]
