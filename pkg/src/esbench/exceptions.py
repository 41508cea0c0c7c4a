class EsbenchError(Exception):
    """Base class for all errors raised by esbench."""


class ConfigurationError(EsbenchError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class PreconditionError(EsbenchError, ValueError):
    pass


class IndexBuildError(EsbenchError):
    pass


class TrainingError(EsbenchError):
    pass


class CorruptArtifactError(EsbenchError):
    pass


class StaleArtifactError(EsbenchError):
    pass


class StageError(EsbenchError):
    """A serving stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str, status: int = 502, timings=None):
        self.stage = stage
        self.status = status
        self.message = message
        self.timings = list(timings or [])
        super().__init__(f"{stage}: {message}")


class NotFoundError(EsbenchError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "not found"


class ShapeError(EsbenchError, ValueError):
    pass
