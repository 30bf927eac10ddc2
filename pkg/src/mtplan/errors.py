"""Exception hierarchy shared across the planner."""


class PlanError(Exception):
    """Base class for all planner errors."""

    exit_code = 4


class ParseError(PlanError):
    exit_code = 2

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += str(source)
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


class WorkloadError(ParseError):
    pass


class CyclicWorkload(WorkloadError):
    pass


class UnknownModule(WorkloadError):
    pass


class EmptyWorkload(WorkloadError):
    pass


class InsufficientProfile(PlanError):
    pass


class DegenerateFit(PlanError):
    pass


class OutOfRange(PlanError):
    pass


class NoValidAllocation(PlanError):
    exit_code = 3


class EmptyLevel(PlanError):
    pass


class PlacementInfeasible(PlanError):
    exit_code = 3

    def __init__(self, message, wave=None, device=None):
        self.wave = wave
        self.device = device
        super().__init__(message)


class InvalidPlan(PlanError):
    """Raised by the validator; carries every violation found."""

    exit_code = 4

    def __init__(self, violations):
        self.violations = list(violations)
        head = "; ".join(self.violations[:5])
        more = f" (+{len(self.violations) - 5} more)" if len(self.violations) > 5 else ""
        super().__init__(f"plan violates {len(self.violations)} constraint(s): {head}{more}")
