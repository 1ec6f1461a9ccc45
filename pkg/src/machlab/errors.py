"""Exception hierarchy shared across the pipeline stages."""


class MachlabError(Exception):
    """Base class for all lab errors."""


class DimensionMismatch(MachlabError, ValueError):
    pass


class MeanNotZero(MachlabError, ValueError):
    """Input to the inverse Laplacian has a nonzero spatial mean; re-center first."""


class AlphaTooLarge(MachlabError, ValueError):
    """Mollifier scale is larger than T or smaller than two time steps."""


class TooFewSlices(MachlabError, ValueError):
    pass


class UnknownScenario(MachlabError, KeyError):
    pass


class ScaleLadderExhausted(MachlabError, RuntimeError):
    pass


class Infeasible(MachlabError, RuntimeError):
    """No K makes delta^2 pi + K positive with unit density mean."""


class NonpositiveDensity(MachlabError, ValueError):
    pass


class PreconditionViolated(MachlabError, ValueError):
    pass


class NoAdmissibleSize(MachlabError, RuntimeError):
    pass


class ResidualBudgetExceeded(MachlabError, RuntimeError):
    pass


class Unresolvable(MachlabError, ValueError):
    pass


class NoDecrease(MachlabError, RuntimeError):
    pass


class InsufficientSpan(MachlabError, ValueError):
    pass
