"""Late-interaction relevance scoring: scorers, learnable LITE heads, index, theory checks."""

from literank.errors import (
    CheckpointError,
    ContractError,
    IndexFormatError,
    NotFoundError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ContractError",
    "IndexFormatError",
    "NotFoundError",
    "ShapeError",
    "TrainingError",
]
