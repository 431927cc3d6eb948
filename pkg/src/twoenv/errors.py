"""Semantic exceptions raised by the public API."""


class TwoEnvError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateLabelsError(TwoEnvError):
    """A computation that needs positive-label rows found none."""


class NonSeparableError(TwoEnvError):
    """Hard-margin training was asked for on non-separable data.

    Carries a certificate: the index of the most violated constraint and
    the best (signed) margin achieved for it during the attempt.
    """

    def __init__(self, message: str, violated_index: int, margin: float):
        super().__init__(message)
        self.violated_index = violated_index
        self.margin = margin


class InfeasibleMarginError(TwoEnvError):
    """Requested margin level exceeds the largest achievable margin."""


class IllConditionedGramError(TwoEnvError):
    """Gram matrix too ill-conditioned for the requested computation."""


class DegenerateConstraintError(TwoEnvError):
    """Both coefficients of the stage-2 linear constraint vanish."""


class ConfigError(TwoEnvError):
    """Malformed experiment configuration (file or CLI flags)."""
