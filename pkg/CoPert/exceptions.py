"""Exceptions raised by the CoPert library.

Every error derives from :exc:`CoPertError` through one of two branches:

* :exc:`ValidationError` for bad input (compositions, effect specifications,
  datasets, names). The command-line script exits with code 2 on these.
* :exc:`EstimationError` for failures that happen while fitting nuisances or
  computing an estimate. The command-line script exits with code 3 on these.

"""


class CoPertError(Exception):
    """Base class of every exception raised by CoPert."""


class ValidationError(CoPertError, ValueError):
    """Raised when an input does not satisfy a precondition."""


class EstimationError(CoPertError, RuntimeError):
    """Raised when an estimate can't be computed from valid inputs."""


# ===========
# Validation
# ===========
class AllZero(ValidationError):
    pass


class NegativeEntry(ValidationError):
    pass


class InvalidComposition(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class OverlappingSets(ValidationError):
    pass


class EmptySubcompositionB(ValidationError):
    pass


class IndexOutOfRange(ValidationError):
    pass


class AtEndpoint(ValidationError):
    """Raised when a point already sits at the endpoint of a perturbation, so
    that its direction is undefined."""


class OutOfDomain(ValidationError):
    pass


class LogOfZero(ValidationError):
    pass


class OutOfImage(ValidationError):
    pass


class ZeroCoordinate(ValidationError):
    pass


class NonPositiveSpeed(ValidationError):
    pass


class NotDecreasing(ValidationError):
    pass


class InvalidEffectSpec(ValidationError):
    pass


class EmptyData(ValidationError):
    pass


class EmptyCandidates(ValidationError):
    pass


class ConstantRegressor(ValidationError):
    pass


class UnknownSetting(ValidationError):
    pass


class UnknownLearner(ValidationError):
    pass


class UnknownMethod(ValidationError):
    pass


class DatasetError(ValidationError):
    """Raised when a CSV dataset can't be turned into (Y, Z, X)."""


# ==========
# Estimation
# ==========
class SingularSystem(EstimationError):
    pass


class DegenerateDesign(EstimationError):
    """Raised for a local polynomial design that can't be solved even with
    the ridge fallback.

    Parameters
    ----------
    index : int
        Row of the weight matrix whose design is degenerate.

    """
    def __init__(self, index, msg=None):
        self.index = index
        if msg is None:
            msg = "Degenerate local polynomial design at row {}".format(index)
        super().__init__(msg)


class DegenerateVariance(EstimationError):
    pass


class InsufficientData(EstimationError):
    pass


class NoUntreated(EstimationError):
    pass


class DegenerateJ(EstimationError):
    pass


class NotFitted(EstimationError):
    pass
