"""Errors raised by qms-deco.

The CLI maps them onto exit codes: ``ModelFileError`` -> 1,
``StructuralError`` and the remaining numeric errors -> 2.
"""


class QmsDecoError(Exception):
    """Base class of every error raised by this package"""


class RejectedInputError(QmsDecoError, ValueError):
    """Malformed input: wrong shapes, non-Hermitian matrices, invalid parameters"""


class DomainError(QmsDecoError, ValueError):
    """A spectrum falls outside the domain of the requested function"""

    def __init__(self, message, eigenvalue=None):
        if eigenvalue is not None:
            message = "%s (offending eigenvalue %.6g)" % (message, eigenvalue)
        super().__init__(message)
        self.eigenvalue = eigenvalue


class StructuralError(QmsDecoError):
    """The semigroup does not have the structure the analysis relies on"""


class NoFaithfulStateError(StructuralError):
    def __init__(self, message, best_state=None):
        super().__init__(message)
        self.best_state = best_state


class DecompositionError(StructuralError):
    """Block decomposition of the decoherence-free algebra failed verification"""


class UnsupportedStructureError(StructuralError):
    """An operation restricted to detailed-balance models got another model"""


class ToleranceViolation(QmsDecoError):
    def __init__(self, name, residual, tolerance):
        super().__init__("%s: residual %.3g exceeds tolerance %.3g" % (name, residual, tolerance))
        self.name = name
        self.residual = residual
        self.tolerance = tolerance


class ModelFileError(QmsDecoError):
    """A model file could not be read, rendered, parsed or validated"""

    def __init__(self, fname, message, excerpt=None):
        text = "%s - %s" % (fname, message)
        if excerpt:
            text += "\n%s" % excerpt
        super().__init__(text)
        self.fname = fname
        self.excerpt = excerpt
