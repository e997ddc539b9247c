"""Exception types shared across the package.

The CLI maps these onto exit codes, see ``facemotion.cli``.
"""


class FaceMotionError(Exception):
    pass


class DimensionError(FaceMotionError, ValueError):
    """Operands have incompatible shapes."""


class ParameterError(FaceMotionError, ValueError):
    """A scalar argument is outside its valid range."""


class DegenerateError(FaceMotionError, ValueError):
    """Input carries no usable information (constant map, collapsed landmarks)."""


class RegionError(FaceMotionError, ValueError):
    """A local region falls outside the image or collapses."""


class ConfigError(FaceMotionError, ValueError):
    pass


class LayoutError(FaceMotionError, ValueError):
    """Landmark layouts disagree."""


class DataError(FaceMotionError, ValueError):
    """Malformed or inconsistent on-disk data."""


class NumericalAbort(FaceMotionError, RuntimeError):
    """Training produced a non-finite loss."""
