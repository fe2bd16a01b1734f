class ValidationError(ValueError):
    """Input or configuration violates a documented contract."""


class EmptyForegroundError(ValidationError):
    pass


class PredictorError(ValidationError):
    """A predictor returned a patch of the wrong shape or outside [0, 1]."""
