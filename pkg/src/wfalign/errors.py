"""Exception types raised across the package."""


class WfAlignError(Exception):
    """Base class for all package errors."""


class EmptyInput(WfAlignError, ValueError):
    pass


class DomainError(WfAlignError, ValueError):
    pass


class ValidationError(WfAlignError, ValueError):
    pass


class FormatError(WfAlignError, ValueError):
    """Input bytes are not in a recognised container format."""


class Unsupported(WfAlignError, ValueError):
    """Recognised but deliberately unsupported input (pcapng, non-Ethernet links)."""


class ParseError(WfAlignError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotAugmentable(WfAlignError, ValueError):
    pass


class DegenerateInput(WfAlignError, ValueError):
    pass


class ConfigError(WfAlignError, ValueError):
    pass


class DegenerateBatch(WfAlignError, ValueError):
    pass


class BatchError(WfAlignError, ValueError):
    pass


class DuplicateClass(WfAlignError, ValueError):
    pass


class NumericError(WfAlignError, FloatingPointError):
    pass


class DivergedError(WfAlignError, FloatingPointError):
    """Training produced a non-finite loss.

    ``state`` holds the last parameter state whose loss was finite, ``history``
    the per-step losses recorded up to the failure.
    """

    def __init__(self, message, state=None, history=None):
        super().__init__(message)
        self.state = state
        self.history = history or []
