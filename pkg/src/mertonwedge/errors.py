"""Exception taxonomy for the solver package.

Every failure mode that callers are expected to distinguish gets its own
class.  All of them derive from :class:`MertonWedgeError`, so blanket
handling remains possible, and they are grouped by the layer that raises
them (parameter validation, leg integration, shooting, series algebra,
expansion pipeline, verification).
"""


class MertonWedgeError(Exception):
    """Base class for all package-specific errors."""


# --- parameter validation ------------------------------------------------

class BadRange(MertonWedgeError):
    """A raw parameter lies outside its admissible range."""


class IllPosed(MertonWedgeError):
    """The well-posedness margin 2*sigma^2*delta*(1-p) - p*mu^2 is not positive."""


class UnitMerton(MertonWedgeError):
    """The Merton proportion equals one, which the theory excludes."""


# --- closed-form evaluation ----------------------------------------------

class DenominatorZero(MertonWedgeError):
    """The rational slope field was evaluated where its denominator vanishes."""


class OutOfDomain(MertonWedgeError):
    """Evaluation outside the domain of a closed-form ingredient."""


# --- leg integration -----------------------------------------------------

class NoFlatPoint(MertonWedgeError):
    """The derivative never returned to zero before the integration horizon."""


class StiffnessFailure(MertonWedgeError):
    """Step size underflowed during leg integration."""


class OutOfRange(MertonWedgeError):
    """A query point lies outside the interval a solution object covers."""


# --- shooting and position location --------------------------------------

class BracketFailure(MertonWedgeError):
    """No left-boundary candidate attains the target quadrature value."""


class RootNotBracketed(MertonWedgeError):
    """An interior root finder was handed an interval without a sign change."""


# --- series algebra ------------------------------------------------------

class CenterMismatch(MertonWedgeError):
    """Operands are expansions around different centers."""


class DivisionByZeroConstantTerm(MertonWedgeError):
    """Series division requires an invertible (nonzero) constant term."""


class NonpositiveConstantTerm(MertonWedgeError):
    """log and fractional powers require a positive constant term."""


class NotInvertible(MertonWedgeError):
    """Series reversion requires zero constant term and nonzero linear term."""


# --- expansion pipeline --------------------------------------------------

class SingularDenominator(MertonWedgeError):
    """The slope field's denominator vanishes at the expansion center."""


class NewtonDivergence(MertonWedgeError):
    """The stacked Newton iteration failed to reduce the residual."""


class BranchAmbiguity(MertonWedgeError):
    """Branch selection for the flat-point series could not pick a root."""


class LeadingCoefficientZero(MertonWedgeError):
    """The cubic-root extraction found a vanishing leading coefficient."""


class BranchSelectionFailure(MertonWedgeError):
    """No real cube-root branch produces an admissible inverse map."""


class CaseBoundary(MertonWedgeError):
    """The endowment sits on a case boundary; the caller must pick a case."""


# --- verification --------------------------------------------------------

class HZero(MertonWedgeError):
    """The h-function vanished on the solved strip."""


class SignChange(MertonWedgeError):
    """The h-function changed sign on the solved strip."""


class DegenerateFit(MertonWedgeError):
    """Slope fitting was attempted on differences at the floating-point floor."""
