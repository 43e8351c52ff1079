"""Exception hierarchy shared by every module of the package."""


class QreError(Exception):
    """Base class for all errors raised by qreip."""


class DomainViolation(QreError, ValueError):
    """An argument lies outside the domain of a scalar or matrix function."""


class NonSymmetric(QreError, ValueError):
    pass


class EigFailure(QreError, RuntimeError):
    pass


class DimensionMismatch(QreError, ValueError):
    pass


class NotInterior(QreError, ValueError):
    """A point is not strictly inside a barrier domain.

    ``condition`` names the violated requirement (e.g. ``"T>0"``,
    ``"X>0"``) and ``block`` the offending block index when known.
    """

    def __init__(self, condition, block=None, detail=""):
        self.condition = condition
        self.block = block
        msg = f"point not interior: {condition}"
        if block is not None:
            msg += f" (block {block})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class SingularBlock(QreError, ArithmeticError):
    pass


class NoConvergence(QreError, RuntimeError):
    pass


class Inconsistent(QreError, ValueError):
    """A linear system E x = d has no solution."""


class NoInteriorFace(QreError, ValueError):
    pass


class NotHermitian(QreError, ValueError):
    pass


class Infeasible(QreError, ValueError):
    pass


class ParseError(QreError, ValueError):
    def __init__(self, message, location=""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class InvariantViolation(QreError, ValueError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"{invariant}" + (f": {detail}" if detail else ""))


class BadParams(QreError, ValueError):
    pass
