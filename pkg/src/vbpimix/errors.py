"""Exception hierarchy shared by every module."""


class VBPIError(Exception):
    """Base class for all errors raised by vbpimix."""


class InvalidCladeError(VBPIError, ValueError):
    pass


class RootednessError(VBPIError, ValueError):
    pass


class UnsupportedSizeError(VBPIError, ValueError):
    pass


class MissingEdgeError(VBPIError, KeyError):
    def __str__(self):
        # KeyError would print the repr of the message
        return str(self.args[0]) if self.args else ""


class NewickParseError(VBPIError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentShapeError(VBPIError, ValueError):
    pass


class DuplicateTaxonError(VBPIError, ValueError):
    pass


class EmptyInputError(VBPIError, ValueError):
    pass


class TaxonSetError(VBPIError, ValueError):
    pass


class RangeError(VBPIError, ValueError):
    pass


class DuplicateTopologyError(VBPIError, ValueError):
    pass


class IncompatibleCheckpointError(VBPIError, ValueError):
    pass


class SupportViolationError(VBPIError, KeyError):
    """A topology, subsplit or split lies outside the model support."""

    def __str__(self):
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""


class DomainError(VBPIError, ValueError):
    pass


class ContractError(VBPIError, ValueError):
    pass


class InvalidParticleError(VBPIError, ValueError):
    pass


class BaselineUndefinedError(VBPIError, ValueError):
    pass


class NonFiniteGradientError(VBPIError, FloatingPointError):
    pass
