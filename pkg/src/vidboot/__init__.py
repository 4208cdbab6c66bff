"""Bootstrapped self-supervised depth and segmentation from monocular video.

A small numpy-only stack: reverse-mode autodiff, camera geometry, the
consistency losses, compact encoder-decoder networks, a ray-cast synthetic
video generator, two-stage training, evaluation metrics and a CLI.
"""

from .errors import ConfigError, ContractError, DatasetFormatError, DomainError

__version__ = "0.1.0"

__all__ = ["ConfigError", "ContractError", "DatasetFormatError", "DomainError", "__version__"]
