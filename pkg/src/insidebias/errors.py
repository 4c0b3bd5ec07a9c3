"""Exception hierarchy shared by every subpackage."""


class InsideBiasError(Exception):
    """Base class for all library errors."""


class DimensionError(InsideBiasError, ValueError):
    """A tensor or layer received an incompatible shape."""


class NumericError(InsideBiasError, FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""

    def __init__(self, message: str, layer: str | None = None):
        if layer is not None:
            message = f"{message} (layer {layer!r})"
        super().__init__(message)
        self.layer = layer


class ConfigurationError(InsideBiasError, ValueError):
    """Unsupported or inconsistent configuration."""


class InputError(InsideBiasError, ValueError):
    """Caller supplied unusable input (empty group, single group, ...)."""


class DegenerateModelError(InsideBiasError, ValueError):
    """Activations are identically zero, so ratios are undefined."""


class GroupLookupError(InsideBiasError, KeyError):
    """A criterion or group name is not declared on a dataset."""


class CapacityError(InsideBiasError, ValueError):
    """A protocol asked for more samples of a group than exist."""

    def __init__(self, group: str, needed: int, available: int):
        super().__init__(
            f"group {group!r} needs {needed} samples but only {available} "
            f"are available (shortfall {needed - available})"
        )
        self.group = group
        self.needed = needed
        self.available = available


# IDX parsing

class IdxFormatError(InsideBiasError, ValueError):
    """Base for IDX parse failures."""


class MagicNumberError(IdxFormatError):
    pass


class IdxLengthMismatchError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


# weight files

class WeightFileError(InsideBiasError):
    """Base for weight file load failures."""


class ChecksumError(WeightFileError):
    def __init__(self, tensor: str):
        super().__init__(f"checksum mismatch in tensor {tensor!r}")
        self.tensor = tensor


class VersionError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ArchMismatchError(WeightFileError):
    pass
