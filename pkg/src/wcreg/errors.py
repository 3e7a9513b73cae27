"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A parameter violates a documented precondition or constraint."""


class NonproxableError(ValueError):
    """Proximal step size too large for the functional's weak-convexity modulus."""


class InnerSolveError(RuntimeError):
    """Inner prox solver failed to reach its first-order tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CertificateError(RuntimeError):
    """No applicable certificate case for the requested bound."""


class DivergenceError(RuntimeError):
    """Iterates exceeded the divergence guard."""


class UnsupportedError(RuntimeError):
    """Operation unavailable at this problem size or operator type."""


class StructureError(ValueError):
    """A structural network constraint (e.g. nonnegative weights) is violated."""


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite; carries the last good parameters."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
