"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI:
    ArgumentError / ConfigError      -> 2
    FormatError / ManifestError      -> 3
    NumericalError                   -> 4
"""


class SegxaiError(Exception):
    """Base class for all toolkit errors."""


class ArgumentError(SegxaiError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class ConfigError(ArgumentError):
    """A configuration object is infeasible or inconsistent."""


class ValidationError(SegxaiError, ValueError):
    """Input data violates a domain-type invariant (e.g. non-finite values)."""


class StateError(SegxaiError, RuntimeError):
    """An object is in the wrong state for the requested operation."""


class CapabilityError(SegxaiError, RuntimeError):
    """The adapter lacks an optional capability (e.g. white-box hooks)."""


class FormatError(SegxaiError):
    """A file does not conform to its documented byte-level format."""


class ManifestError(FormatError):
    """A dataset manifest fails schema or consistency checks."""


class NumericalError(SegxaiError):
    """A numerical computation produced non-finite or divergent results."""
