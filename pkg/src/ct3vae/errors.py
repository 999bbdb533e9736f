"""Exception types that map onto the CLI exit codes."""


class ConfigError(Exception):
    """Bad usage, bad config file, or contradictory options (exit code 1)."""


class VerificationError(Exception):
    """An oracle check failed beyond its tolerance (exit code 2)."""


class NumericError(Exception):
    """A computation produced NaN/Inf or otherwise left its domain (exit code 3)."""
