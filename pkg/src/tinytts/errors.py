"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage errors exit 2 (argparse),
data/format errors exit 3, numeric failures exit 4.
"""


class TinyTTSError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(TinyTTSError):
    """Tensor shapes do not conform; the message names both shapes."""


class ConfigError(TinyTTSError):
    """Invalid configuration value or combination."""


class SequenceTooShortError(TinyTTSError):
    """Input sequence too short for the requested convolution."""


class TokenError(TinyTTSError):
    """Token id outside the vocabulary; names the offending index."""


class EmptyUtteranceError(TinyTTSError):
    """All phoneme durations rounded to zero; nothing to synthesize."""


class AlignmentError(TinyTTSError):
    """Mel frame count disagrees with the duration targets."""


class DataFormatError(TinyTTSError):
    """Malformed external data (lexicon, WAV, config file, mel dump)."""


class ArchiveError(DataFormatError):
    """Base class for weight-archive problems."""


class BadMagicError(ArchiveError):
    """File does not start with the expected archive magic."""


class VersionError(ArchiveError):
    """Archive format version is not supported."""


class TruncatedArchiveError(ArchiveError):
    """Archive ends before the declared payload is complete."""


class NumericError(TinyTTSError):
    """A non-finite value appeared where finite math was required."""
