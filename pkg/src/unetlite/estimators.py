"""scikit-learn style wrappers around the engine.

These follow the estimator conventions (constructor stores parameters
verbatim, fit returns self, get_params/set_params work with clone) so the
segmenter and the quantizer compose with sklearn pipelines and tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import quant, tiling
from .errors import UsageError
from .model import UNetModel, load_model
from .validation import check_batches, check_image


class UNetSegmenter(BaseEstimator):
    """Tiled binary segmentation with a bound U-Net model.

    Parameters
    ----------
    model : UNetModel or path to a model directory
    tile, stride : tiling geometry (tile must equal the model input size)
    threshold : probability cut for the positive class
    workers : optional thread-pool size for per-tile inference
    """

    def __init__(self, model=None, tile=256, stride=224, threshold=0.5, workers=None):
        self.model = model
        self.tile = tile
        self.stride = stride
        self.threshold = threshold
        self.workers = workers

    def _resolve(self) -> UNetModel:
        if self.model is None:
            raise UsageError("UNetSegmenter needs a model (object or directory)")
        if isinstance(self.model, UNetModel):
            return self.model
        return load_model(self.model)

    def fit(self, X=None, y=None):
        """No-op training; resolves and validates the model binding."""
        self.model_ = self._resolve()
        return self

    def _fitted(self) -> UNetModel:
        if not hasattr(self, "model_"):
            self.fit()
        return self.model_

    def predict_proba(self, X) -> np.ndarray:
        """Stitched (H,W) probability raster for one (C,H,W) image."""
        model = self._fitted()
        img = check_image(X, model.config.in_channels)
        grid = tiling.plan(img.shape[1], img.shape[2], self.tile, self.stride)
        return tiling.infer_tiles(model, img, grid, workers=self.workers)

    def predict(self, X) -> np.ndarray:
        """Binary (H,W) building mask for one (C,H,W) image."""
        return (self.predict_proba(X) >= self.threshold).astype(np.uint8)


class PostTrainingQuantizer(BaseEstimator):
    """Calibrate on representative batches, then quantize a float model.

    fit(model, X) runs float forwards over the batches in X and records
    activation ranges; transform(model) returns the quantized model.
    (Not a TransformerMixin: the transform maps models, not data arrays.)
    """

    def __init__(self, weight_bits=8, act_bits=8, skip_first_layer=True,
                 calibration_mode="minmax", percentile=0.999):
        self.weight_bits = weight_bits
        self.act_bits = act_bits
        self.skip_first_layer = skip_first_layer
        self.calibration_mode = calibration_mode
        self.percentile = percentile

    def _scheme(self) -> quant.QuantScheme:
        return quant.QuantScheme(
            weight_bits=self.weight_bits, act_bits=self.act_bits,
            skip_first_layer=self.skip_first_layer,
            calibration_mode=self.calibration_mode, percentile=self.percentile)

    def fit(self, model: UNetModel, X):
        """Calibrate activation ranges from an iterable of input batches."""
        scheme = self._scheme()
        batches = check_batches(X, model.config.in_channels, model.config.input_size)
        self.stats_ = quant.calibrate(model, batches, scheme)
        self.fitted_on_ = model
        return self

    def transform(self, model: UNetModel | None = None) -> UNetModel:
        if not hasattr(self, "stats_"):
            raise UsageError("call fit with calibration batches first")
        return quant.quantize_model(model or self.fitted_on_, self.stats_, self._scheme())

    def fit_transform(self, model: UNetModel, X) -> UNetModel:
        return self.fit(model, X).transform(model)
