"""Exception types shared across the package."""


class FormatError(ValueError):
    """A serialized artifact (latent container, model file, key file) is malformed."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """File declares an unsupported format version."""


class TruncatedError(FormatError):
    """File ends before the declared payload is complete."""


class PayloadError(FormatError):
    """Payload disagrees with its header (checksum, finiteness, or size)."""


class CapacityError(ValueError):
    """Requested watermark length exceeds what the carrier can hold."""


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or otherwise diverged."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
