"""Multi-view Chinese relation classification on a small numpy autodiff engine."""

from .model import VERSION as __version__
from .model import ModelConfig, MultiViewModel

__all__ = ["ModelConfig", "MultiViewModel", "__version__"]
