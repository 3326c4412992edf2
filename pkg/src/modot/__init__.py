"""Joint monocular depth and occlusion-boundary estimation at desk scale."""
from .config import Config, load_config
from .errors import ConfigError, DataError, ModotError, NumericError

__version__ = "0.1.0"
__all__ = ["Config", "ConfigError", "DataError", "ModotError", "NumericError", "load_config"]
