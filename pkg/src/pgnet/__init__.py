"""PAN-guided hyperspectral pansharpening with abundance-space fusion.

Subpackages are plain numpy: ``tensor``/``nn`` provide a small reverse-mode
autodiff engine, the rest build the degradation pipeline, the fusion network,
its training loop, metrics, baselines and file formats.
"""

from .errors import ConfigError, ContractError, DimensionError, FormatError, NumericalError, PgnetError
from .model import Pgnet, PgnetConfig

__version__ = "0.1.0"

__all__ = ["Pgnet", "PgnetConfig", "PgnetError", "ConfigError", "ContractError", "DimensionError",
           "FormatError", "NumericalError", "__version__"]
