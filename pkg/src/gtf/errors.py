"""Exception hierarchy shared by every gtf module."""


class GTFError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateReference(GTFError, ValueError):
    """A reference direction is too short to project onto."""


class OutOfRange(GTFError, ValueError):
    pass


class InvalidRange(GTFError, ValueError):
    pass


class InvalidDim(GTFError, ValueError):
    pass


class DimensionMismatch(GTFError, ValueError):
    pass


class DimensionUnsupported(GTFError, ValueError):
    pass


class SpecMismatch(GTFError, ValueError):
    pass


class UnknownCondition(GTFError, KeyError):
    pass


class DenoiserFailure(GTFError, FloatingPointError):
    """The denoiser returned NaN or Inf."""


class IndefinitePrecision(GTFError, ValueError):
    """A fused or quotient Gaussian ended up with a non-positive precision."""


class UnsupportedComposition(GTFError, NotImplementedError):
    pass


class DataExhausted(GTFError, ValueError):
    pass


class DivergedLoss(GTFError, FloatingPointError):
    pass


class ConfigError(GTFError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class ValidationError(ConfigError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
