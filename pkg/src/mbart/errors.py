class DataError(Exception):
    """Bad user-supplied data or files (CLI exit code 2)."""


class InvariantError(Exception):
    """An internal consistency check failed (CLI exit code 3)."""
