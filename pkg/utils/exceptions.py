class MplError(Exception):
    """Base class of all errors raised by this package."""


class DimensionError(MplError, ValueError):
    pass


class NumericError(MplError, ArithmeticError):
    pass


class ContractError(MplError, ValueError):
    """A precondition of an operation does not hold."""


class DegenerateBatchError(ContractError):
    pass


class TokenIndexError(MplError, IndexError):
    pass


class DegenerateCorpusError(ContractError):
    pass


class CheckpointFormatError(MplError):
    pass


class CheckpointCorruptionError(MplError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UsageError(MplError):
    """Wrong command line usage, reported with exit code 2."""


class DatasetFormatError(MplError, ValueError):
    pass
