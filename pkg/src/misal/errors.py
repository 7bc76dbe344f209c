"""Exception hierarchy shared by every module."""


class MisalError(Exception):
    """Base class for all errors raised by the package."""


class ConfigurationError(MisalError, ValueError):
    """Invalid or unsupported configuration (set kinds, schedules, plugins)."""


class ContractError(MisalError, ValueError):
    """Inputs violate an operation's preconditions (e.g. dimension mismatch)."""


class InnerSolverError(MisalError, RuntimeError):
    """The subproblem solver could not produce a certified point."""


class NumericalFailure(InnerSolverError):
    """Iterates became non-finite during an inner solve."""


class CertificationError(MisalError, RuntimeError):
    """A learning sequence violated its claimed linear-rate envelope."""


class OracleError(MisalError, RuntimeError):
    """The active-set oracle found no feasible KKT point or hit its size guard."""


class TheoremViolation(MisalError, AssertionError):
    """A run trace broke one of the rate envelopes."""

    def __init__(self, theorem, k, measured, envelope):
        self.theorem = theorem
        self.k = k
        self.measured = measured
        self.envelope = envelope
        super().__init__(
            f"{theorem} violated at k={k}: measured {measured!r} > envelope {envelope!r}"
        )


class RunAborted(MisalError, RuntimeError):
    """An outer run stopped early; carries the state and partial trace."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace
