"""Error taxonomy shared across the package.

Two broad families, chosen so the CLI can map failures to exit codes
without inspecting messages: bad inputs or violated contracts are
``DataError`` (exit 2), numeric breakdowns are ``NumericError`` (exit 3).
"""


class DataError(Exception):
    """Invalid input data, file format, or violated call contract."""


class NumericError(Exception):
    """Numeric failure: domain violation, non-finite value, failed check."""
