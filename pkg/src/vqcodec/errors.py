"""Exception types shared across the codec package."""


class CodecError(ValueError):
    """Base class for all package errors."""


class ShapeError(CodecError):
    """Tensor rank or dimension mismatch."""


class ConfigError(CodecError):
    """Invalid or inconsistent configuration."""


class DomainError(CodecError):
    """Math operation applied outside its domain (strict mode)."""


class TrainingError(CodecError):
    """Training aborted: divergence or non-finite gradients."""


class FormatError(CodecError):
    """Malformed serialized data (bad magic, corrupt header)."""


class LengthError(FormatError):
    """Serialized payload shorter or longer than the header promises."""


class VersionError(FormatError):
    """Serialized data written by an unsupported format version."""
