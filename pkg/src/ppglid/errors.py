"""Exception hierarchy shared by all ppglid modules.

Every error carries a short machine-readable category used by the CLI
to print ``ERROR <category>: <message>`` lines.
"""


class PpgLidError(Exception):
    category = "internal"


class ConfigError(PpgLidError):
    """Invalid configuration value or key."""

    category = "config"


class FormatError(PpgLidError):
    """Malformed input file (PPG, alignment, inventory, manifest, vocab)."""

    category = "parse"


class DataError(PpgLidError):
    """Invariant violation or mode mismatch in in-memory data."""

    category = "data"


class ArchiveError(PpgLidError):
    """Broken or inconsistent named-tensor archive."""

    category = "archive"


class UsageError(PpgLidError):
    """Command invoked with missing or contradictory arguments."""

    category = "usage"
