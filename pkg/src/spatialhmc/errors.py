"""Exception hierarchy.

Every error carries a ``kind`` (the class name) so the CLI can emit a
machine-readable payload, and an ``exit_code`` following the CLI contract:
2 for input problems, 3 for numerical failures.
"""


class SpatialError(Exception):
    exit_code = 3

    @property
    def kind(self):
        return type(self).__name__


class InputError(SpatialError, ValueError):
    exit_code = 2


class NumericalError(SpatialError, ArithmeticError):
    exit_code = 3


# mesh
class AllCollinear(InputError):
    pass


class DuplicatePoints(InputError):
    pass


class DegenerateTriangle(NumericalError):
    pass


class PointOutsideMesh(InputError):
    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"target point {index} lies outside the mesh")


# linear algebra / shapes
class NotPositiveDefinite(NumericalError):
    pass


class DimensionMismatch(InputError):
    pass


class RankOutOfBounds(InputError):
    pass


# models
class NonPositiveResponse(InputError):
    pass


class UnknownPriorFamily(InputError):
    pass


class SpecMismatch(InputError):
    pass


# sampler
class NonFiniteGradient(NumericalError):
    pass


class AdaptationFailed(NumericalError):
    pass


class NonFiniteInit(NumericalError):
    pass


# diagnostics
class ConstantDraws(NumericalError):
    pass


class TooFewTailSamples(InputError):
    pass


class NonFiniteLoglik(NumericalError):
    pass


class MismatchedObservations(InputError):
    pass


# harness
class ConfigError(InputError):
    pass


class InputNotFound(InputError):
    pass


class ConvergenceFailure(SpatialError):
    exit_code = 4
