"""unetlite: lightweight U-Net inference, quantization, and deployment analysis."""

from .analyzer import analyze, count_macs, count_params, path_breakdown, sweep
from .estimators import PostTrainingQuantizer, UNetSegmenter
from .metrics import Confusion, accuracy, bce, iou
from .model import UNetConfig, UNetModel, bind_weights, build, forward, load_model, save_model
from .quant import CalibrationStats, QuantScheme, calibrate, quantize_model, quantized_size
from .tensor import QuantParams, Tensor, dequantize, fake_quantize, quantize
from .tiling import TileGrid, plan, segment_image, stitch

__version__ = "0.1.0"

__all__ = [
    "CalibrationStats", "Confusion", "PostTrainingQuantizer", "QuantParams",
    "QuantScheme", "Tensor", "TileGrid", "UNetConfig", "UNetModel",
    "UNetSegmenter", "accuracy", "analyze", "bce", "bind_weights", "build",
    "calibrate", "count_macs", "count_params", "dequantize", "fake_quantize",
    "forward", "iou", "load_model", "path_breakdown", "plan", "quantize",
    "quantize_model", "quantized_size", "save_model", "segment_image",
    "stitch", "sweep",
]
