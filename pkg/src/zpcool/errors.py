"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: validation problems exit with 1,
numerical failures with 2 and non-convergence with 3.
"""


class ZPCoolError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class DomainError(ZPCoolError, ValueError):
    """An input lies outside the domain of the requested operation."""

    exit_code = 1


class ConfigError(ZPCoolError, ValueError):
    """A configuration or scenario file is malformed.

    ``line`` carries the 1-based line number when it is known.
    """

    exit_code = 1

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)


class TruncationError(ZPCoolError):
    """Population in the top of a truncated Fock ladder exceeds the tail tolerance."""


class ZeroProbabilityError(ZPCoolError):
    """A projective outcome has (numerically) vanishing probability."""


class ZeroRateError(ZPCoolError):
    """A photon click was requested from a state with no photons."""


class StepSizeError(ZPCoolError):
    """A fixed-step scheme could not satisfy its accuracy criterion."""


class InstabilityError(ZPCoolError):
    """Moments diverged past the configured ceiling."""


class InvalidRegimeError(InstabilityError):
    """Unconditioned Stokes dynamics requested above the stability boundary G^2 >= gamma*kappa."""


class SingularSystemError(ZPCoolError):
    """The steady-state linear system has no unique solution."""


class NonConvergenceError(ZPCoolError):
    """An iterative solver exhausted its budget."""

    exit_code = 3


class NoRootError(NonConvergenceError):
    """A bracketing search found no sign change."""
