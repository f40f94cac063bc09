"""Exception types shared across the simulator."""


class NlimError(Exception):
    """Base class for simulator errors."""


class DomainError(NlimError, ValueError):
    """An activation or step sequence is not strictly monotone."""


class RangeError(NlimError, ValueError):
    """A value falls outside the representable or bracketable range."""


class ConfigError(NlimError, ValueError):
    pass


class CalibrationRangeError(NlimError, ValueError):
    pass


class InvalidEncoding(NlimError, ValueError):
    pass


class MappingError(NlimError, ValueError):
    pass


class InputError(NlimError, ValueError):
    pass


class TrainingError(NlimError, RuntimeError):
    def __init__(self, message, config=None):
        super().__init__(message)
        self.config = config


class DynamicRangeWarning(UserWarning):
    """Bitline swing left the linear discharge region in one or more columns."""
