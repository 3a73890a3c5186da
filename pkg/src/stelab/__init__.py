"""Learning dynamics of quantized linear regression trained with a straight-through estimator."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .quantizer import IDENTITY, QuantizerGrid, make_quantizer, quantize
from .model import ModelConfig, TeacherSpec

__all__ = ["IDENTITY", "ModelConfig", "QuantizerGrid", "TeacherSpec", "make_quantizer", "quantize", "__version__"]
