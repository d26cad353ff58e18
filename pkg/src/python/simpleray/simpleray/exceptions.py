import typing


class SimplerayError(RuntimeError):
    """Base class of every error raised by the laboratory."""


class DomainError(SimplerayError, ValueError):
    pass


class RegistryError(SimplerayError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ShootingError(SimplerayError):
    def __init__(self, message: str, residual: float) -> None:
        super().__init__(message)
        self.residual = residual


class ChartError(SimplerayError):
    pass


class GlancingError(SimplerayError):
    pass


class ProbeError(SimplerayError):
    pass


class ConvergenceError(SimplerayError):
    def __init__(self, message: str, residual: float) -> None:
        super().__init__(message)
        self.residual = residual


class SolverError(SimplerayError):
    def __init__(self, message: str, step: typing.Optional[int] = None) -> None:
        super().__init__(message)
        self.step = step


class FormatError(SimplerayError):
    pass


class ConfigError(SimplerayError):
    def __init__(
        self,
        message: str,
        line: typing.Optional[int] = None,
        column: typing.Optional[int] = None,
    ) -> None:
        if line is not None:
            message = "%s (line %d, column %d)" % (message, line, column or 0)
        super().__init__(message)
        self.line = line
        self.column = column
