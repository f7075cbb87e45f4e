"""Error hierarchy.

Every error carries a short ``category`` string; the command line prints it
as ``error[<category>]: <message>`` and exits with ``exit_code``.
"""


class PolypSynthError(Exception):
    category = "error"
    exit_code = 1


class IngestionError(PolypSynthError):
    category = "ingestion"
    exit_code = 2


class MissingAnnotationError(IngestionError):
    category = "missing-annotation"

    def __init__(self, stem, message=None):
        self.stem = stem
        super().__init__(message or f"no mask found for image {stem!r}")


class ImageIOError(PolypSynthError, OSError):
    category = "io"
    exit_code = 2

    def __init__(self, path, reason=""):
        self.path = str(path)
        msg = f"cannot read {self.path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class InvalidArgumentError(PolypSynthError, ValueError):
    category = "invalid-argument"
    exit_code = 3


class InvalidSplitError(InvalidArgumentError):
    category = "invalid-split"


class ShapeError(InvalidArgumentError):
    category = "shape"


class NumericError(PolypSynthError, ArithmeticError):
    category = "numeric"
    exit_code = 4


class InsufficientDataError(PolypSynthError):
    category = "insufficient-data"
    exit_code = 5


class TrainingDivergedError(NumericError):
    category = "training-diverged"

    def __init__(self, iteration, stage=None, losses=None):
        self.iteration = iteration
        self.stage = stage
        self.losses = dict(losses or {})
        where = f"iteration {iteration}"
        if stage is not None:
            where = f"stage {stage}, " + where
        bad = ", ".join(f"{k}={v}" for k, v in self.losses.items())
        super().__init__(f"non-finite loss at {where}" + (f" ({bad})" if bad else ""))


class ConfigError(PolypSynthError):
    category = "config"
    exit_code = 6

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DependencyError(PolypSynthError):
    category = "dependency"
    exit_code = 7

