"""Exception types shared across the package."""


class LeoError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(LeoError, ValueError):
    """Matrix or sequence dimensions are inconsistent with the declared sizes."""


class NumericalError(LeoError):
    """A dense linear-algebra routine failed to converge."""


class GenerationError(LeoError):
    """Random system generation exhausted its resampling budget."""


class RankDeficientError(LeoError):
    """A matrix required to have full column rank does not."""


class SingularMatrixError(LeoError):
    """A matrix required to be invertible is (numerically) singular."""


class PolePlacementInfeasible(LeoError):
    """Observer gain synthesis is impossible for the given pair."""


class SynthesisFailureError(LeoError):
    """Gain synthesis failed repeatedly for numerical reasons."""


class DivergedRollout(LeoError):
    """An observer rollout produced a non-finite value.

    Attributes
    ----------
    step : int
        First time index at which a non-finite entry appeared.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"rollout diverged at step {step}")


class DegenerateReferenceError(LeoError):
    """Every reference component in the evaluation window was too close to zero."""
