"""Post-training quantization: calibration, weight/activation schemes.

Weights are quantized symmetric per-tensor; activations affine per-tensor
from calibrated ranges.  An Int8-style scheme (weight and activation bits
both >= 2, no per-layer overrides) runs through the integer kernels of
ops.py; binary-weight and mixed low-bit schemes run as fake-quantized
float emulation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CalibrationError, ConfigError, UsageError
from .model import QuantInfo, UNetModel, activation_sites, forward
from .tensor import (QuantParams, Tensor, affine_params, fake_quantize,
                     quantize, symmetric_params)

HIST_BINS = 4096


@dataclass(frozen=True)
class QuantScheme:
    """What to quantize and how."""

    weight_bits: int = 8
    act_bits: int = 8
    skip_first_layer: bool = True
    calibration_mode: str = "minmax"      # "minmax" or "percentile"
    percentile: float = 0.999
    layer_overrides: dict = field(default_factory=dict)  # name -> {"weight_bits": n}

    def __post_init__(self):
        for bits in (self.weight_bits, self.act_bits):
            if not 1 <= bits <= 8:
                raise ConfigError(f"bit width {bits} outside [1, 8]")
        if self.calibration_mode not in ("minmax", "percentile"):
            raise ConfigError(f"unknown calibration mode {self.calibration_mode!r}")
        if self.calibration_mode == "percentile" and not 0.5 < self.percentile <= 1.0:
            raise ConfigError(f"percentile must be in (0.5, 1], got {self.percentile}")

    def weight_bits_for(self, layer: str) -> int:
        return int(self.layer_overrides.get(layer, {}).get("weight_bits", self.weight_bits))

    @property
    def emulated(self) -> bool:
        """True when the scheme cannot run on the integer kernels."""
        return self.weight_bits < 2 or self.act_bits < 2 or bool(self.layer_overrides)


@dataclass
class SiteStats:
    min: float = np.inf
    max: float = -np.inf
    hist: np.ndarray | None = None   # |x| histogram over [0, hist_hi]
    hist_hi: float = 0.0

    def observe(self, arr: np.ndarray):
        self.min = min(self.min, float(arr.min()))
        self.max = max(self.max, float(arr.max()))


@dataclass
class CalibrationStats:
    sites: dict[str, SiteStats] = field(default_factory=dict)

    def site(self, name: str) -> SiteStats:
        return self.sites.setdefault(name, SiteStats())

    def range_for(self, name: str, scheme: QuantScheme) -> tuple[float, float]:
        """Effective calibration range for a site under the scheme."""
        if name not in self.sites:
            raise CalibrationError(f"no calibration statistics for site {name!r}")
        st = self.sites[name]
        lo, hi = st.min, st.max
        if scheme.calibration_mode == "percentile" and st.hist is not None:
            q = _hist_quantile(st.hist, st.hist_hi, scheme.percentile)
            lo, hi = max(lo, -q), min(hi, q)
        return lo, hi


def _hist_quantile(hist: np.ndarray, hi: float, p: float) -> float:
    """p-quantile of |x| from a fixed-range histogram, linear within bins."""
    total = hist.sum()
    if total == 0 or hi == 0.0:
        return 0.0
    target = p * total
    cum = np.cumsum(hist)
    idx = int(np.searchsorted(cum, target))
    if idx >= len(hist):
        return hi
    prev = cum[idx - 1] if idx > 0 else 0
    frac = (target - prev) / hist[idx] if hist[idx] > 0 else 1.0
    width = hi / len(hist)
    return (idx + frac) * width


def calibrate(model: UNetModel, batches, scheme: QuantScheme) -> CalibrationStats:
    """Observe activation ranges with float forwards over the given batches.

    ``batches`` is a sequence of f32 (N,C,H,W) Tensors.  Percentile mode
    makes a second pass to histogram absolute values once the range is
    known.
    """
    batches = list(batches)
    if not batches:
        raise UsageError("calibration needs at least one batch")
    if model.mode != "float":
        raise UsageError("calibrate on the float model, before quantization")
    stats = CalibrationStats()
    wanted = set(activation_sites(model.config, scheme.skip_first_layer))

    # every tapped site is recorded (extras like the probability output are
    # informative); only `wanted` sites feed quantization parameters
    def observe(site, arr):
        stats.site(site).observe(arr)

    for batch in batches:
        forward(model, batch, site_hook=observe)

    if scheme.calibration_mode == "percentile":
        for name in wanted:
            st = stats.site(name)
            st.hist_hi = max(abs(st.min), abs(st.max))
            st.hist = np.zeros(HIST_BINS, dtype=np.int64)

        def histogram(site, arr):
            if site in wanted:
                st = stats.sites[site]
                if st.hist_hi > 0:
                    st.hist += np.histogram(np.abs(arr), bins=HIST_BINS,
                                            range=(0.0, st.hist_hi))[0]

        for batch in batches:
            forward(model, batch, site_hook=histogram)
    return stats


def quantize_model(model: UNetModel, stats: CalibrationStats,
                   scheme: QuantScheme) -> UNetModel:
    """Produce a quantized copy of a bound float model.

    Deterministic: the same model, stats and scheme always yield bitwise
    identical weights.  The first convolution stays bitwise float when
    scheme.skip_first_layer is set.
    """
    if model.mode != "float":
        raise UsageError("quantize_model expects a float model")
    sites = activation_sites(model.config, scheme.skip_first_layer)
    info = QuantInfo(weight_bits=scheme.weight_bits, act_bits=scheme.act_bits,
                     skip_first_layer=scheme.skip_first_layer,
                     mode="emulated" if scheme.emulated else "int")
    for site in sites:
        lo, hi = stats.range_for(site, scheme)
        info.act_ranges[site] = (lo, hi)
        info.act_params[site] = affine_params(lo, hi, scheme.act_bits)

    first = model.first_conv().name
    weights: dict[str, Tensor] = {}
    for d in model.layers:
        wname = d.name + ".weight"
        w = model.weights[wname]
        if scheme.skip_first_layer and d.name == first:
            weights[wname] = w  # bitwise untouched
            continue
        p = symmetric_params(w.data, scheme.weight_bits_for(d.name))
        weights[wname] = fake_quantize(w, p) if info.mode == "emulated" \
            else quantize(w, p)
    return UNetModel(config=model.config, layers=model.layers, weights=weights,
                     biases=dict(model.biases), quant=info)


def quantized_size(model: UNetModel) -> int:
    """Storage bytes of the weight set: params x bytes-per-element.

    Each layer's parameter count (weights + bias) is charged at the byte
    width of its weight tensor (f32 -> 4, i8 -> 1).
    """
    total = 0
    for d in model.layers:
        w = model.weights[d.name + ".weight"]
        total += d.n_params * (1 if w.dtype == "i8" else 4)
    return total
