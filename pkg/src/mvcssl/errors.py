"""Exception hierarchy shared by all modules."""


class MvcsslError(Exception):
    """Base class; carries a machine-readable error class name."""

    @property
    def error_class(self) -> str:
        return type(self).__name__


class FormatError(MvcsslError):
    """Malformed file (bad RIFF header, truncated data, bad checkpoint magic)."""


class UnsupportedFormatError(MvcsslError):
    """Well-formed file in an encoding we do not handle."""


class ArgumentError(MvcsslError, ValueError):
    """A precondition on an argument was violated."""


class DegenerateInputError(MvcsslError):
    """Input is valid in shape but degenerate in content (zero energy, empty pool)."""


class TooShortError(MvcsslError):
    """Waveform shorter than the encoder's receptive field."""


class ContractViolationError(MvcsslError):
    """Caller broke an inter-module contract (e.g. mismatched mask plans)."""


class CheckpointVersionError(MvcsslError):
    """Checkpoint file version or shape set incompatible with the running config."""


class DivergenceError(MvcsslError):
    """Training loss became non-finite."""


class DataError(MvcsslError):
    """Corpus data violates the manifest contract (bad token, missing file)."""
