class DistributedOPFError(Exception):
    pass


class CannotLoadConfig(DistributedOPFError):
    pass


class CaseFormatError(ValueError, DistributedOPFError):
    pass


class MalformedMatrix(CaseFormatError):
    pass


class MissingSection(CaseFormatError):
    pass


class NonNumericToken(CaseFormatError):
    pass


class UnsupportedCostModel(CaseFormatError):
    pass


class CaseValidationError(ValueError, DistributedOPFError):
    "携带全部 ValidationIssue"

    def __init__(self, issues) -> None:
        super().__init__("case failed validation", [str(i) for i in issues])
        self.issues = list(issues)


class NetworkError(ValueError, DistributedOPFError):
    pass


class ZeroImpedanceBranch(NetworkError):
    pass


class SolverError(ArithmeticError, DistributedOPFError):
    "局部子问题求解失败，component 由引擎在向上传播前填写"

    component: str | None = None


class SingularBusSystem(SolverError):
    pass


class BranchInfeasible(SolverError):
    pass


class BranchNoConvergence(SolverError):
    def __init__(self, *args, best=None, decrement: float = float("nan")) -> None:
        super().__init__(*args)
        self.best = best
        self.decrement = decrement


class NotConverged(RuntimeError, DistributedOPFError):
    def __init__(self, *args, report=None) -> None:
        super().__init__(*args)
        self.report = report


class NoFeasibleGridPoint(DistributedOPFError):
    pass
