class CrewError(Exception):
    """Base class for all errors raised by crewfc."""


class FormatError(CrewError, ValueError):
    """A file or byte stream does not match its container format."""


class ProfileError(CrewError, ValueError):
    """A unique-weight profile cannot be realized for the requested shape."""


class ConfigError(CrewError, ValueError):
    """A dataflow config or cost table file is invalid."""


class VerificationError(CrewError):
    """Two execution paths disagree where bit-exactness was required."""
