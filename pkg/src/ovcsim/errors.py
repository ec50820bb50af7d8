"""Exception hierarchy shared across the package."""


class OvcsimError(Exception):
    """Base class for all package-specific errors."""


class SchemaViolation(OvcsimError):
    """An input file does not match its declared schema."""


class UnknownDrugName(OvcsimError):
    """A raw drug name is absent from the standardization table."""


class InconsistentSpan(OvcsimError):
    """A drug line extends past the patient's survival by more than one window."""


class EmptyCohort(OvcsimError):
    """No patients left to derive empirical distributions from."""


class UnknownCategory(OvcsimError):
    """A categorical value is outside the schema vocabulary."""


class NonConvergence(OvcsimError):
    """Newton-Raphson exhausted its iteration budget."""


class SingularHessian(OvcsimError):
    """The (penalized) Hessian could not be factored."""


class DegenerateData(OvcsimError):
    """A survival dataset has no event rows."""


class ZeroSurvival(OvcsimError):
    """Survival underflowed to zero; conditional probabilities are undefined."""


class TerminalState(OvcsimError):
    """An operation was applied to a dead patient state."""


class IllegalAction(OvcsimError):
    """A policy returned an action outside the legal set."""


class NoLegalActions(OvcsimError):
    """Action selection was attempted with an empty legal set."""


class EmptyReplay(OvcsimError):
    """Optimization was requested on an empty replay memory."""


class EmptyRegimenList(OvcsimError):
    """An NCCN regimen list is empty after intersecting with the action set."""


class DegenerateSample(OvcsimError):
    """A sample is too small or has zero variance for the requested test."""


class EmptySample(OvcsimError):
    """A summary was requested for an empty sample."""


class DimensionMismatch(OvcsimError):
    """Array shapes do not line up."""


class StaleCache(OvcsimError):
    """backward() was called with a cache from a different input."""


class IncompatibleCheckpoint(OvcsimError):
    """A checkpoint file cannot be loaded by this version."""
