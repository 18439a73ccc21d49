"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class NonFiniteError(ValueError):
    """A tensor contains NaN or infinite values."""


class ModelFormatError(ValueError):
    """A model manifest or weight blob is inconsistent."""


class VersionError(ModelFormatError):
    """A file declares a schema version this code does not understand."""


class FormatError(ValueError):
    """An image or CSV file is malformed."""


class RuleError(ValueError):
    """A backward rule cannot be applied to a layer kind."""


class NoConvLayerError(ValueError):
    """GradCAM was requested on a model without convolutions."""


class EmptyPositiveSetError(ValueError):
    """The attribution map has no strictly positive score."""


class DegenerateScoreError(ValueError):
    """The explained class score is too small to normalise by."""


class RangeError(ValueError):
    """A scalar argument lies outside its admissible range."""


class UndefinedError(ValueError):
    """A logical ordering index does not exist for the statement."""


class EmptyInputError(ValueError):
    """An aggregate was requested over no rows."""


class ConfigError(ValueError):
    """A run configuration is invalid."""
