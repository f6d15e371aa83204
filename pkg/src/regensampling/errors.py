"""Exception types raised by the samplers, oracles and CLI."""


class RegenError(Exception):
    """Base class for all package errors."""


class TrialBudgetExceeded(RegenError):
    """A rejection loop consumed more proposal draws than allowed."""


class ZeroWeight(RegenError):
    """A proposal draw landed where the target vanishes (w = 0)."""


class RatioExceedsBound(RegenError):
    """An observed likelihood ratio exceeded the declared envelope constant."""


class NonpositiveInterarrival(RegenError):
    """An interarrival sampler produced a value <= 0."""


class QueryPastHorizon(RegenError):
    """A renewal trace was queried at or beyond its simulation horizon."""


class DegenerateComponent(RegenError):
    """A uniform component has zero mass on the requested interval."""


class SingleCycle(RegenError):
    """Drop-last estimator requested on a path with a single cycle."""


class ZeroVariance(RegenError):
    """Autocorrelation requested for a constant series."""


class DataIntegrity(RegenError):
    """An embedded or user supplied dataset failed its consistency checks."""


class NoConvergence(RegenError):
    """An iterative solver hit its iteration cap or diverged."""


class IndefiniteHessian(RegenError):
    """The negative Hessian at a reported mode is not positive definite."""


class SingularDesign(RegenError):
    """The Gibbs normal update has a singular precision matrix."""


class SchemaMismatch(RegenError):
    """Rows handed to the table writer do not match the declared schema."""
