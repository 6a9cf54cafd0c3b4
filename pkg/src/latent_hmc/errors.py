"""Shared exception types."""


class ContractViolation(ValueError):
    """An operation was called outside its documented domain (shape or value)."""


class NumericError(ArithmeticError):
    """A computation produced NaN where the contract forbids it.

    ``node_id`` identifies the offending tape node when the failure happened
    inside an autodiff pass.
    """

    def __init__(self, message, node_id=None):
        super().__init__(message)
        self.node_id = node_id


class ParseError(ValueError):
    """A data file failed to parse; carries the path and 1-based line number."""

    def __init__(self, message, path=None, line=None):
        loc = f"{path}:{line}: " if path is not None and line is not None else ""
        super().__init__(f"{loc}{message}")
        self.path = path
        self.line = line
