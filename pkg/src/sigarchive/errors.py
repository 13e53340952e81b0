"""Exception types shared across the package."""


class SigArchiveError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(SigArchiveError, ValueError):
    """An argument, configuration value, or input file is invalid."""


class DegenerateInputError(SigArchiveError, ValueError):
    """Input is structurally valid but numerically unusable (e.g. all zeros)."""


class DegenerateBuildError(SigArchiveError, RuntimeError):
    """Archive construction finished without archiving a single signature."""


class ArchiveFormatError(SigArchiveError, ValueError):
    """A stored document is corrupt, incomplete, or has an unsupported version."""
