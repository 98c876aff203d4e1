"""Exception hierarchy shared by all modules."""


class AtmpcError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(AtmpcError):
    pass


class DimensionMismatch(ConfigurationError, ValueError):
    pass


# geometry
class GeometryError(AtmpcError):
    pass


class EmptyPolytope(GeometryError):
    pass


class UnboundedPolytope(GeometryError):
    pass


class DimensionTooHigh(GeometryError):
    pass


# qp
class SolverError(AtmpcError):
    pass


class MaxIterations(SolverError):
    pass


class InvalidProgram(SolverError, ValueError):
    pass


# estimator
class DegenerateRegressor(AtmpcError):
    pass


class EmptyMembershipSet(AtmpcError):
    pass


# tube mpc
class SynthesisFailed(AtmpcError):
    pass


class OcpInfeasible(AtmpcError):
    pass


# certify
class NotSymmetric(ConfigurationError):
    pass


class NonPositiveP(ConfigurationError):
    pass


# perf bound
class InvalidEpsilon(AtmpcError, ValueError):
    pass


class GammaNonpositive(AtmpcError):
    pass


class NoFeasiblePoint(AtmpcError):
    pass


class NoFeasibleSamples(AtmpcError):
    pass


# harness
class InitiallyInfeasible(AtmpcError):
    pass


class RecursiveFeasibilityViolated(AtmpcError):
    pass


class InvariantViolated(AtmpcError):
    pass


class RiccatiDiverged(AtmpcError):
    pass
