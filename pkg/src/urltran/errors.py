"""Exception types shared across the toolkit.

Every error carries a short machine-readable ``kind`` so the CLI can map it
to an exit status and a one-line error record.
"""


class UrlTranError(Exception):
    kind = "error"


class InvalidArgument(UrlTranError, ValueError):
    kind = "invalid_argument"


class ParseError(UrlTranError, ValueError):
    """A data file line could not be parsed."""

    kind = "parse_error"

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyDatasetError(UrlTranError, ValueError):
    kind = "empty_dataset"


class FormatError(UrlTranError, ValueError):
    """A vocabulary, checkpoint or config file violates its schema."""

    kind = "schema_mismatch"


class MalformedUrl(UrlTranError, ValueError):
    kind = "malformed_url"


class AttackError(UrlTranError):
    """Base class for attacks that do not apply to a given URL."""

    kind = "attack_not_applicable"


class NoHomoglyphAvailable(AttackError):
    kind = "no_homoglyph_available"


class NotSplittable(AttackError):
    kind = "not_splittable"


class NothingToPermute(AttackError):
    kind = "nothing_to_permute"
