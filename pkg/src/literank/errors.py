"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not agree."""


class ContractError(ValueError):
    """A precondition on argument values was violated."""


class NotFoundError(KeyError):
    """A requested document or query id is absent."""

    def __str__(self) -> str:
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""


class IndexFormatError(ValueError):
    """An index or embedding file is truncated or has a bad header."""


class CheckpointError(ValueError):
    """A head checkpoint file is malformed or of the wrong kind."""


class TrainingError(RuntimeError):
    """Training aborted (malformed data or non-finite loss)."""
