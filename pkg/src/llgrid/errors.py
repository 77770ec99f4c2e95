"""Exception types shared across the package."""


class LLGridError(Exception):
    """Base class for all package errors."""


class BudgetError(LLGridError):
    """Requested grid would exceed the configured state-count budget."""


class ConstraintError(LLGridError, ValueError):
    """An input violates a structural constraint (index sets, grids, masses)."""


class DomainError(LLGridError, ValueError):
    """A numeric argument is outside its admissible range."""


class NormalizationError(LLGridError, ValueError):
    """A density fails nonnegativity or unit-mass validation."""


class CapRequiredError(LLGridError):
    """Interaction evaluated on coincident nodes carrying mass with no cap configured."""


class DegenerateInputError(LLGridError):
    """A construction received inputs that make it collapse (e.g. empty bump ball)."""


class CutoffDegeneracyError(LLGridError):
    """A partition-of-unity denominator vanishes where its numerator does not."""


class HypothesisError(LLGridError):
    """A named smallness/concentration hypothesis fails; message says which one."""


class DoublingScanError(LLGridError):
    """Exhaustive scan found no point meeting the doubling bound."""


class DualSolveError(LLGridError):
    """Eigenvalue iteration for the dual bound failed to converge."""


class SolverError(LLGridError):
    """Unrecoverable solver failure (distinct from a non-converged report)."""


class ConfigError(LLGridError, ValueError):
    """Malformed experiment configuration."""
