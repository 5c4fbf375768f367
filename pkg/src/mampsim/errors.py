"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """An argument is outside its documented range or has the wrong shape."""


class StateError(RuntimeError):
    """An operation was invoked before its prerequisites were computed."""


class NumericError(RuntimeError):
    """A numerical routine failed to converge or lost required structure."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
