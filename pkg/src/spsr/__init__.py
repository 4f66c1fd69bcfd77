"""Structure-preserving super-resolution toolkit.

Two-branch GAN generator with gradient-map guidance, trainable either with
explicit gradient-space losses or with structure losses from a
self-supervised feature extractor, plus the pretext trainers, evaluation
metrics, and a CLI wrapping the whole pipeline.
"""

from .errors import (CheckpointError, ConfigError, DataError,
                     PluginMissingError, ShapeError, SpsrError)
from .gradient_ops import directional_gradients, extract_gradient_map

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "PluginMissingError",
    "ShapeError",
    "SpsrError",
    "directional_gradients",
    "extract_gradient_map",
    "__version__",
]

__version__ = "0.1.0"
