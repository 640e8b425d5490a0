"""Exception hierarchy shared by every module."""


class CKAError(Exception):
    """Base class for all errors raised by the package."""


class SizeError(CKAError, ValueError):
    pass


class StateError(CKAError, ValueError):
    pass


class LabelError(CKAError, KeyError):
    pass


class ProtocolMisuseError(CKAError, RuntimeError):
    pass


class ConfigError(CKAError, ValueError):
    pass


class InsufficientDataError(CKAError, ValueError):
    pass


class LifecycleError(CKAError, RuntimeError):
    pass


class ReplayError(CKAError, RuntimeError):
    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class UnresolvableRoundError(CKAError, RuntimeError):
    pass
