"""Exception types shared across the package."""


class HateProfilerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HateProfilerError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(HateProfilerError):
    """Input is structurally empty, e.g. a fully masked row or an all-pad post."""


class ConfigError(HateProfilerError):
    """A configuration value is out of its valid range."""


class InputError(HateProfilerError):
    """A runtime input (label, id list, ...) violates the operation contract."""


class FormatError(HateProfilerError):
    """A binary or text artifact does not conform to its declared format."""


class CorpusParseError(HateProfilerError):
    """An author file could not be parsed; message names the file."""


class ConsistencyError(HateProfilerError):
    """Corpus and truth data disagree (missing ids, duplicates, ...)."""


class UnknownAuthorError(HateProfilerError):
    """Requested author id is absent from the embedding store."""


class TrainingDivergedError(HateProfilerError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at training step {step}")
