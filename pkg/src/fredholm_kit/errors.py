"""Exception types raised by the library."""


class FredholmError(Exception):
    """Base class for all errors raised by fredholm_kit."""


class GridError(FredholmError, ValueError):
    """Malformed grid or grid mismatch between tabulated functions."""


class SupportError(FredholmError, ValueError):
    """The second argument of a divergence vanishes where the first does not."""


class ZeroMassError(FredholmError, ValueError):
    """A function that must be normalised has non-positive mass."""


class DomainError(FredholmError, ValueError):
    """A kernel was evaluated outside its declared domain."""


class DegenerateKernelError(FredholmError, ValueError):
    """A kernel column has (numerically) zero mass."""


class MixtureVanishesError(FredholmError, ArithmeticError):
    """The current mixture is zero somewhere the target (or a sample) has mass."""


class ShiftTooSmallError(FredholmError, ValueError):
    """The shifted target is still negative at some node."""


class DegenerateSampleError(FredholmError, ValueError):
    """The sample has no spread, so a data-driven bandwidth is undefined."""


class ConfigError(FredholmError, ValueError):
    """One or more problems found while validating a run configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
