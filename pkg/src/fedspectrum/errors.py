"""Exception types shared across the package."""


class FedSpectrumError(Exception):
    """Base class for all package errors."""


class ParameterError(FedSpectrumError, ValueError):
    """A parameter is outside its documented range."""


class ShapeError(FedSpectrumError, ValueError):
    """Operands have mismatched grid or tensor shapes."""


class InputError(FedSpectrumError, ValueError):
    """An input value is malformed (e.g. non-finite energies)."""


class FormatError(FedSpectrumError, ValueError):
    """A serialized payload violates the wire format."""


class ConfigError(FedSpectrumError, ValueError):
    """An experiment configuration is invalid."""


class AggregationError(FedSpectrumError, ValueError):
    """Model updates cannot be aggregated together."""


class NumericError(FedSpectrumError, ArithmeticError):
    """A numeric invariant (finite loss or parameters) was violated."""
