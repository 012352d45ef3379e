"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Array shapes are inconsistent with the declared problem dimensions."""


class ParameterError(ValueError):
    """A numeric parameter is outside its admissible range."""


class DegenerateIterateError(ValueError):
    """An update step would divide by a zero block norm."""


class DegenerateAlignmentError(ValueError):
    """Alignment is undefined because a block to be aligned is zero."""


class UndefinedMetricError(ValueError):
    """A metric's normalizer vanishes (e.g. zero target vector)."""


class DivergenceError(RuntimeError):
    """The solver's loss became non-finite or blew up."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or incomplete."""
