"""Exception hierarchy shared by all solver layers."""


class TfetiPlastError(Exception):
    """Base class for every error raised by this package."""


# material
class ZeroDeviator(TfetiPlastError, ValueError):
    pass


# mesh / partition / io
class DegenerateBox(TfetiPlastError, ValueError):
    pass


class InvalidGeometry(TfetiPlastError, ValueError):
    pass


class TooManySubdomains(TfetiPlastError, ValueError):
    pass


class ParseError(TfetiPlastError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvariantViolation(TfetiPlastError, ValueError):
    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        msg = f"mesh invariant violated: {invariant}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


# assembly
class DegenerateElement(TfetiPlastError, ValueError):
    def __init__(self, message, element=None):
        self.element = element
        if element is not None:
            message = f"element {element}: {message}"
        super().__init__(message)


# tfeti
class RankDeficiency(TfetiPlastError):
    pass


class FactorizationFailure(TfetiPlastError):
    pass


class CoarseSingular(TfetiPlastError):
    pass


class MaxIterations(TfetiPlastError):
    def __init__(self, message, report=None):
        self.report = report
        super().__init__(message)


class BreakdownError(TfetiPlastError):
    pass


# driver
class LinearSolveFailure(TfetiPlastError):
    def __init__(self, message, newton_index=None):
        self.newton_index = newton_index
        super().__init__(message)


class NoConvergence(TfetiPlastError):
    def __init__(self, message, history=None, step=None, rows=None):
        self.history = list(history or [])
        self.step = step
        self.rows = list(rows or [])
        super().__init__(message)


# cli
class ConfigError(TfetiPlastError, ValueError):
    def __init__(self, key, reason):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")
