"""Exception taxonomy shared across the package.

Every failure raised on purpose derives from :class:`DacError` so callers can
catch the whole family; the subclasses mirror the distinct failure modes of
tree construction, weighting, resampling, model building and reporting.
"""


class DacError(Exception):
    """Base class for all deliberate failures in this package."""


# --- tree construction / lookup ---------------------------------------------

class MultipleRoots(DacError):
    """More than one node has no parent."""


class CycleDetected(DacError):
    """The parent map contains a cycle (or no root at all)."""


class DanglingParent(DacError):
    """A parent id points outside the node range."""


class InvalidNode(DacError):
    """An operation referenced a node id that does not exist."""


class MissingSpace(DacError):
    """A path layout was requested but some node has no declared space."""


# --- sampling and weighting --------------------------------------------------

class SamplerFailure(DacError):
    """A proposal or kernel returned draws of the wrong shape or non-finite."""


class NonFiniteWeight(DacError):
    """A weight evaluated to NaN/Inf, or to zero where positivity is required."""


class ZeroNormalizer(DacError):
    """Every target weight vanished; the normalized estimate is undefined."""


class AllZeroWeights(DacError):
    """Every weight in a categorical/ESS input vanished."""


# --- resampling strategies ----------------------------------------------------

class MaterializationCapExceeded(DacError):
    """The product-form atom set would exceed the configured cap."""


class EmptyIndexSet(DacError):
    """An incomplete-estimator index set has no entries."""


class BudgetTooSmall(DacError):
    """An index-set budget cannot satisfy the balanced-design requirements."""


class StrategyIncompatible(DacError):
    """The selected resampling strategy cannot serve this node's weights."""


# --- models -------------------------------------------------------------------

class TooLarge(DacError):
    """A finite model exceeds the enumeration bound."""


class InvalidCounts(DacError):
    """A count table violates 0 <= m <= M (or is otherwise malformed)."""


class InvalidData(DacError):
    """Model input data has the wrong shape or content."""


class NoOracle(DacError):
    """Exact values were requested from a model without an oracle."""


# --- harness ------------------------------------------------------------------

class DegenerateFit(DacError):
    """A regression/fit has no usable spread in its inputs."""


class InsufficientRows(DacError):
    """Too few replicate rows for the requested statistic."""
