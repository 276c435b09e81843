"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3.
Contract/shape errors indicate caller bugs and are allowed to surface as
ordinary tracebacks.
"""


class DocnmtError(Exception):
    pass


class ShapeError(DocnmtError):
    """Operands have incompatible or unexpected shapes."""


class ContractError(DocnmtError):
    """A documented precondition was violated by the caller."""


class DataError(DocnmtError):
    """Malformed corpus, vocabulary or configuration input."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt or inconsistent with its config."""


class NumericalError(DocnmtError):
    """Non-finite values or a failed numerical check."""


class TrainingDiverged(NumericalError):
    """Training hit a non-finite loss; carries the last finite snapshot."""

    def __init__(self, message: str, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
