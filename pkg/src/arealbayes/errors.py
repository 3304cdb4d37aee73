"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition or invariant."""


class SchemaError(ValidationError):
    """A file does not match its pinned CSV schema.

    Messages name the file, line and column so batch callers can report
    them verbatim.
    """


class DimensionMismatchError(ValidationError):
    """Two inputs that must align (graph, panel, counts, ...) do not."""
