"""Few-shot class-incremental learning framework.

Trains an encoder over a base session followed by N-way K-shot incremental
sessions, with toggleable technique groups: stability (supervised
contrastive loss, pre-assigned maximally separated prototypes,
pseudo-classes), adaptability (masked subnetwork fine-tuning), and training
(contrastive pre-training, rotation pretext).
"""

__version__ = "0.1.0"

from fscil_tricks.errors import (
    ConfigError,
    DataError,
    DivergenceError,
    FsciTricksError,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "FsciTricksError",
]
