"""Exception hierarchy.

Everything raised on purpose by tnrbm derives from :class:`TnrbmError`, and
also from the closest builtin so callers can keep catching ``ValueError`` or
``IndexError`` the usual way.
"""


class TnrbmError(Exception):
    """Base class for all tnrbm errors."""


class IndexBoundsError(TnrbmError, IndexError):
    pass


class ShapeError(TnrbmError, ValueError):
    pass


class ContractionShapeError(ShapeError):
    pass


class RankShapeError(ShapeError):
    """Invalid MPO rank vector (boundary, positivity or adjacency)."""


class MaterializationTooLarge(TnrbmError, ValueError):
    pass


class EnumerationCapError(TnrbmError, ValueError):
    pass


class VariantError(TnrbmError, TypeError):
    pass


class DomainError(TnrbmError, ValueError):
    pass


class FormatError(TnrbmError, ValueError):
    """Malformed file contents."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class UnsupportedDtypeError(FormatError):
    pass


class PayloadLengthError(FormatError):
    pass
