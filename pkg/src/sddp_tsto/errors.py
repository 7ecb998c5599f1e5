from typing import Optional


class SddpError(Exception):
    """Base class for errors raised by sddp_tsto. `exit_code` is what the CLI returns when one escapes."""

    exit_code: int = 1


class InvalidParameter(SddpError, ValueError):
    exit_code = 2


class DimensionMismatch(InvalidParameter):
    exit_code = 2


class TreeTooLarge(InvalidParameter):
    """Raised when an oracle instance exceeds the tiny-instance budget."""

    exit_code = 2


class NumericalDegeneracy(SddpError, ArithmeticError):
    exit_code = 3


class NumericalFailure(SddpError, ArithmeticError):
    """The simplex ran out of pivots, or a solution failed its feasibility recheck."""

    exit_code = 3


class SubproblemInfeasible(SddpError):
    """
    A stage subproblem had no optimal solution. This means relatively complete recourse is violated for the model,
    so there is nothing sensible to do except stop and report where it happened.
    """

    exit_code = 4

    def __init__(
        self,
        stage: int,
        realization: Optional[int] = None,
        branch: Optional[str] = None,
        status: Optional[str] = None,
    ):
        self.stage = stage
        self.realization = realization
        self.branch = branch
        self.status = status
        where = f"stage {stage}"
        if realization is not None:
            where += f", realization {realization}"
        if branch is not None:
            where += f", {branch} branch"
        super().__init__(f"Subproblem at {where} returned {status or 'no optimal solution'}")
