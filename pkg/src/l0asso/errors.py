"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class ConfigError(ValueError):
    """Invalid configuration value.

    ``field`` names the offending setting when one is known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class InputError(ValueError):
    """Data passed to an op is outside its valid range (e.g. labels)."""


class UsageError(RuntimeError):
    """API called in the wrong order, e.g. gradient of an unrecorded value."""


class IDXParseError(ValueError):
    """Malformed IDX file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class TrainingDiverged(RuntimeError):
    """Raised when the loss or a gradient becomes non-finite.

    ``last_good`` holds the network as of the last completed epoch, or the
    initial network when divergence happens during the first epoch.
    """

    def __init__(self, message, epoch, step, last_good=None, state=None):
        self.epoch = epoch
        self.step = step
        self.last_good = last_good
        self.state = state or {}
        super().__init__(f"{message} (epoch {epoch}, step {step})")
