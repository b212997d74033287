"""Exception types raised across the toolkit."""


class SeqPackError(Exception):
    """Base class for all seqpack errors."""


class EmptyConversation(SeqPackError):
    pass


class RoleAlternationViolation(SeqPackError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class EmptyContent(SeqPackError):
    pass


class UnknownRole(SeqPackError):
    pass


class SystemMessageNotSupported(SeqPackError):
    pass


class TokenizerFailure(SeqPackError):
    pass


class LengthMismatch(SeqPackError):
    pass


class MissingFinalEos(SeqPackError):
    pass


class UnknownLabel(SeqPackError):
    pass


class TokenIdOutOfRange(SeqPackError):
    pass


class OrphanAnswer(SeqPackError):
    pass


class InputNotFound(SeqPackError):
    pass


class ParseError(SeqPackError):
    def __init__(self, message: str, path: str = "", line: int = 0):
        super().__init__(message)
        self.path = path
        self.line = line


class ConfigConflict(SeqPackError):
    pass


class IoFailure(SeqPackError):
    pass
