"""Exception taxonomy for file parsing and CLI-facing failures."""


class ParseError(Exception):
    """Base for any malformed input file."""


class BadMagicError(ParseError):
    """File signature or identifier line is wrong."""


class HeaderFormatError(ParseError):
    """Header exists but a field is malformed or unsupported."""


class ResolutionError(ParseError):
    """Resolution line is absent, malformed, or out of supported range."""


class TruncationError(ParseError):
    """Pixel data ends before the declared resolution is covered."""


class DataError(Exception):
    """Input data is structurally valid but unusable (CLI exit code 2)."""


class NumericError(Exception):
    """Numerical failure such as divergence or NaN loss (CLI exit code 3)."""
