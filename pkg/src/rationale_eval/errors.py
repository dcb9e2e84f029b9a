"""Exception types raised across rationale_eval."""

from __future__ import annotations


class RationaleEvalError(Exception):
    pass


class SchemaViolation(RationaleEvalError, ValueError):
    """A dataset or annotation line does not satisfy its schema."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location = f"{path}:"
        if line is not None:
            location = f"{location}{line}: "
        elif location:
            location = f"{location} "
        super().__init__(f"{location}{message}")


class MissingField(RationaleEvalError, ValueError):
    pass


class EmptyField(RationaleEvalError, ValueError):
    pass


class WrongAnnotatorCount(RationaleEvalError, ValueError):
    pass


class InvalidConfig(RationaleEvalError, ValueError):
    pass


class EmptySet(RationaleEvalError, ValueError):
    pass


class EmptyTrainingSet(EmptySet):
    pass


class MissingFlags(RationaleEvalError, ValueError):
    pass


class UnknownLabel(RationaleEvalError, KeyError):
    pass


class BaselineLabelMismatch(RationaleEvalError, ValueError):
    pass


class UnparseableGeneration(RationaleEvalError, ValueError):
    def __init__(self, message: str, text: str = ""):
        self.text = text
        super().__init__(message)


class JoinFailure(RationaleEvalError, ValueError):
    pass


class UntrainedScorer(RationaleEvalError, RuntimeError):
    pass


class DivergedTraining(RationaleEvalError, RuntimeError):
    pass


class ConverterUnavailable(RationaleEvalError, RuntimeError):
    pass


class BackendUnavailable(RationaleEvalError, RuntimeError):
    pass


class HookUnsupported(RationaleEvalError, RuntimeError):
    pass


class IOFailure(RationaleEvalError, RuntimeError):
    pass
