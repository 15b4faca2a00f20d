"""Exception hierarchy shared by all modules."""


class MarkovCPError(Exception):
    """Base class for every error raised by markovcp."""


class InvalidParameter(MarkovCPError, ValueError):
    pass


class InvalidData(MarkovCPError, ValueError):
    pass


class DomainError(MarkovCPError, ValueError):
    """Input lies outside the region where a formula is defined or non-vacuous."""


class NotErgodic(MarkovCPError):
    pass


class NotReversible(MarkovCPError):
    pass


class InsufficientData(MarkovCPError):
    pass


class SingularFit(MarkovCPError):
    pass


class BadHeader(InvalidData):
    pass


class ParseError(InvalidData):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnsupportedFormat(InvalidParameter):
    pass
