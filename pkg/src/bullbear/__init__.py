"""Bull-bear market dynamics: bias-aware price/text fusion, momentum-aware
contrastive training, signal backtesting and attention-migration analytics."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BullBearError, CheckpointError, ConfigError, DataError, DimensionError, GraphError,
    InsufficientDataError, NonFiniteError, ParseError, TrainingError,
)
