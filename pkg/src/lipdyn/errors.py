"""Exception hierarchy shared by all lipdyn modules."""


class LipdynError(Exception):
    """Base class for every error raised by lipdyn."""


class EigenvalueOnCircle(LipdynError):
    """An eigenvalue sits on (or too close to) the splitting circle."""


class NonConvergedEigensolve(LipdynError):
    """The Schur/eigen decomposition failed or its residual check failed."""


class RateOutsideSpectralGap(LipdynError):
    """Requested adapted-norm rate does not lie inside the spectral gap."""


class DepthOverflow(LipdynError):
    """Adapted-norm iterate depth exceeded its cap."""


class NotHyperbolicAtUnitCircle(LipdynError):
    """Splitting constants do not satisfy b < 1 < a."""


class GapViolated(NotHyperbolicAtUnitCircle):
    """Equilibrium linearization is not hyperbolic at the unit circle."""


class NoSpectralGapAtRho(LipdynError):
    """The split does not separate the spectrum at the requested rate."""


class SmallnessViolated(LipdynError):
    """Lipschitz constant of the nonlinearity is too large.

    ``inequality`` names the failing condition, ``required`` and ``actual``
    carry the threshold and the measured value when they make sense.
    """

    def __init__(self, msg, inequality=None, required=None, actual=None):
        super().__init__(msg)
        self.inequality = inequality
        self.required = required
        self.actual = actual


class ContractionFailed(LipdynError):
    """A Picard iteration did not converge or its residual grew."""


class NotConverged(LipdynError):
    """An outer sweep loop hit its iteration cap."""


class NotAnEquilibrium(LipdynError):
    """The supplied point is not a fixed point of the map."""


class StraighteningContractionFailed(LipdynError):
    """Lipschitz condition needed for the straightening conjugacy fails."""


class PreconditionFailed(LipdynError):
    """A continuation precondition failed; ``inequality`` names it."""

    def __init__(self, msg, inequality=None):
        super().__init__(msg)
        self.inequality = inequality


class CountMismatch(LipdynError):
    """Number of equilibria differs from the expected count."""

    def __init__(self, msg, at=None, found=None, expected=None):
        super().__init__(msg)
        self.at = at
        self.found = found
        self.expected = expected


class SeparationViolated(LipdynError):
    """Equilibria are too close for their isolation balls to be disjoint."""


class BoundViolated(LipdynError):
    """A quantitative bound failed; ``inequality`` and ``eta`` locate it."""

    def __init__(self, msg, inequality=None, eta=None):
        super().__init__(msg)
        self.inequality = inequality
        self.eta = eta


class NotNearIdentity(LipdynError):
    """Map is not a small Lipschitz perturbation of the identity."""


class TargetOutsideGuaranteedImage(LipdynError):
    """Target point lies outside the ball guaranteed to be covered."""


class EpsilonTooLarge(LipdynError):
    """Measured deviation leaves no usable reparametrization domain."""


class InversionFailed(LipdynError):
    """Near-identity inversion failed during reparametrization."""


class HypothesisFailed(LipdynError):
    """Closeness-to-reference hypothesis for graph intersection failed."""


class NoFixedPointInBall(LipdynError):
    """Grid search found no fixed point within the grid-spacing bound."""


class NotOnBothGraphs(LipdynError):
    """Point does not lie on both graphs to tolerance."""


class NoRoomToRecenter(LipdynError):
    """Recentered chart ball would leave the original domain."""


class DecompositionMismatch(LipdynError):
    """Charts are not given over complementary coordinate blocks."""


class HorizonExceeded(LipdynError):
    """Orbit neither connected nor escaped within the horizon."""


class NodeCountMismatch(LipdynError):
    """Connection graphs with different node counts were compared."""


class ResonantLambda(LipdynError):
    """Reaction parameter sits on a resonance k^2."""


class SeedExhausted(LipdynError):
    """Newton seeds did not produce the expected number of roots."""

    def __init__(self, msg, found=None, expected=None):
        super().__init__(msg)
        self.found = found
        self.expected = expected


class ConfigInvalid(LipdynError):
    """Scenario configuration failed validation."""
