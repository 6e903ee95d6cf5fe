"""Exception hierarchy. Each class records the pipeline stage that raised it."""


class CfHazardError(Exception):
    """Base class for all package errors."""

    module = "cfhazard"


class DataError(CfHazardError, ValueError):
    """Input panel violates the survival-data contract."""

    module = "data"

    def __init__(self, message, entity=None, period=None):
        super().__init__(message)
        self.entity = entity
        self.period = period


class SingularMatrixError(CfHazardError, ArithmeticError):
    """A factorization hit a zero pivot at the requested tolerance."""

    module = "numerics"

    def __init__(self, message, pivot):
        super().__init__(message)
        self.pivot = pivot


class EstimationError(CfHazardError):
    """First- or second-stage estimation could not be completed."""

    module = "estimation"

    def __init__(self, message, module=None, report=None, trace=None):
        super().__init__(message)
        if module is not None:
            self.module = module
        self.report = report
        self.trace = trace


class VceError(CfHazardError):
    """The sandwich variance could not be formed."""

    module = "vce"

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class HarnessError(CfHazardError):
    """Monte Carlo harness aborted, typically from excessive non-convergence."""

    module = "simulate"
