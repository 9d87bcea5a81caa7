"""Reference layer implementations, float and quantized.

Convolutions are cross-correlations (no kernel flip) with zero "same"
padding.  The float path computes per batch item via im2col + sgemm and
accumulates in f32.  The quantized path shifts codes by the zero point,
accumulates exactly (f64 matmul over integer-valued operands, well below
2**53), folds the bias into the accumulator domain, and requantizes with
round-half-to-even.

Batch items are processed one at a time so that a batched forward is
bitwise identical to concatenated single-item forwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import QuantParams, Tensor


@dataclass
class ConvSpec:
    """Static description of a convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    padding: str = "same"  # "same" (zero fill) or "none"
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.kernel[0] < 1 or self.kernel[1] < 1:
            raise ConfigError(f"bad kernel {self.kernel}")
        if self.padding not in ("same", "none"):
            raise ConfigError(f"unknown padding mode {self.padding!r}")
        if self.bias is None:
            self.bias = np.zeros(self.out_channels, dtype=np.float32)
        else:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.out_channels,):
                raise ShapeError(
                    f"bias shape {self.bias.shape} != ({self.out_channels},)"
                )


class MacCounter:
    """Accumulates multiply-accumulate counts per layer during a forward."""

    def __init__(self):
        self.per_layer: dict[str, int] = {}

    def add(self, name: str, macs: int):
        self.per_layer[name] = self.per_layer.get(name, 0) + macs

    @property
    def total(self) -> int:
        return sum(self.per_layer.values())


def _check_conv_inputs(x: Tensor, w: Tensor, spec: ConvSpec):
    if x.data.ndim != 4:
        raise ShapeError(f"activations must be (N,C,H,W), got {x.shape}")
    if w.data.ndim != 4:
        raise ShapeError(f"weights must be (O,I,Kh,Kw), got {w.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    expect_w = (spec.out_channels, spec.in_channels, *spec.kernel)
    if w.shape != expect_w:
        raise ShapeError(f"weight shape {w.shape} != {expect_w}")


def _pad_amounts(k: int, stride: int) -> tuple[int, int]:
    # zero "same": output = input / stride; asymmetric split for even kernels
    total = max(k - stride, 0)
    return total // 2, total - total // 2


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """(C,Hp,Wp) padded image -> ((Ho*Wo, C*kh*kw) patch matrix, Ho, Wo)."""
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (C, Ho, Wo, kh, kw)
    c, ho, wo = windows.shape[:3]
    return windows.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw), ho, wo


def conv2d(x: Tensor, w: Tensor, spec: ConvSpec, counter: MacCounter | None = None,
           name: str = "conv") -> Tensor:
    """Float cross-correlation with zero same-padding, f32 accumulation."""
    _check_conv_inputs(x, w, spec)
    kh, kw = spec.kernel
    ph, pw = _pad_amounts(kh, spec.stride), _pad_amounts(kw, spec.stride)
    if spec.padding == "none":
        ph = pw = (0, 0)
    wmat = w.data.reshape(spec.out_channels, -1).T  # (I*kh*kw, O)
    outs = []
    for n in range(x.shape[0]):
        xp = np.pad(x.data[n], ((0, 0), ph, pw))
        cols, ho, wo = _im2col(xp, kh, kw, spec.stride)
        y = cols @ wmat + spec.bias  # f32 sgemm
        outs.append(y.reshape(ho, wo, spec.out_channels).transpose(2, 0, 1))
    out = np.stack(outs)
    if counter is not None:
        counter.add(name, spec.in_channels * spec.out_channels * kh * kw
                    * out.shape[2] * out.shape[3] * x.shape[0])
    return Tensor(out, "f32")


def _requantize_acc(acc: np.ndarray, acc_scale: float, out_p: QuantParams) -> np.ndarray:
    """Map exact integer accumulators (real value = acc * acc_scale) to codes."""
    codes = np.round(acc * (acc_scale / out_p.scale)) + out_p.zero_point
    return np.clip(codes, out_p.qmin, out_p.qmax).astype(np.int8)


def conv2d_quant(x: Tensor, w: Tensor, spec: ConvSpec, out_params: QuantParams,
                 counter: MacCounter | None = None, name: str = "conv") -> Tensor:
    """Quantized conv: i8 in, i32-exact accumulation, requantize to out_params."""
    _check_conv_inputs(x, w, spec)
    if x.quant is None or w.quant is None:
        raise ShapeError("quantized conv needs quantized input and weights")
    kh, kw = spec.kernel
    ph, pw = _pad_amounts(kh, spec.stride), _pad_amounts(kw, spec.stride)
    if spec.padding == "none":
        ph = pw = (0, 0)
    sx, sw = x.quant.scale, w.quant.scale
    acc_scale = sx * sw
    # real zero pads as the zero-point code; shifting codes first is equivalent
    shifted = x.data.astype(np.float64) - x.quant.zero_point
    wmat = w.data.reshape(spec.out_channels, -1).T.astype(np.float64)
    bias_acc = np.round(spec.bias.astype(np.float64) / acc_scale)
    outs = []
    for n in range(x.shape[0]):
        xp = np.pad(shifted[n], ((0, 0), ph, pw))
        cols, ho, wo = _im2col(xp, kh, kw, spec.stride)
        acc = cols @ wmat + bias_acc  # exact: integer-valued f64
        q = _requantize_acc(acc, acc_scale, out_params)
        outs.append(q.reshape(ho, wo, spec.out_channels).transpose(2, 0, 1))
    out = np.stack(outs)
    if counter is not None:
        counter.add(name, spec.in_channels * spec.out_channels * kh * kw
                    * out.shape[2] * out.shape[3] * x.shape[0])
    return Tensor(out, "i8", quant=out_params)


def _check_tconv(x: Tensor, w: Tensor, spec: ConvSpec):
    if spec.kernel != (2, 2) or spec.stride != 2:
        raise ConfigError("transposed conv supports only kernel (2,2), stride 2")
    if x.data.ndim != 4:
        raise ShapeError(f"activations must be (N,C,H,W), got {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[1]} channels, spec wants {spec.in_channels}")
    expect_w = (spec.out_channels, spec.in_channels, 2, 2)
    if w.shape != expect_w:
        raise ShapeError(f"weight shape {w.shape} != {expect_w}")


def tconv2d(x: Tensor, w: Tensor, spec: ConvSpec, counter: MacCounter | None = None,
            name: str = "tconv") -> Tensor:
    """2x2 stride-2 transposed conv: each input pixel scatters, no overlap."""
    _check_tconv(x, w, spec)
    n, c, h, wd = x.shape
    outs = []
    for i in range(n):
        y = np.einsum("cij,ocab->oiajb", x.data[i], w.data, dtype=np.float32)
        outs.append(y.reshape(spec.out_channels, 2 * h, 2 * wd)
                    + spec.bias[:, None, None])
    out = np.stack(outs)
    if counter is not None:
        # output-centric count, matching the analyzer convention
        counter.add(name, spec.in_channels * spec.out_channels * 4
                    * out.shape[2] * out.shape[3] * n)
    return Tensor(out, "f32")


def tconv2d_quant(x: Tensor, w: Tensor, spec: ConvSpec, out_params: QuantParams,
                  counter: MacCounter | None = None, name: str = "tconv") -> Tensor:
    _check_tconv(x, w, spec)
    if x.quant is None or w.quant is None:
        raise ShapeError("quantized tconv needs quantized input and weights")
    n, c, h, wd = x.shape
    acc_scale = x.quant.scale * w.quant.scale
    shifted = x.data.astype(np.float64) - x.quant.zero_point
    bias_acc = np.round(spec.bias.astype(np.float64) / acc_scale)
    outs = []
    for i in range(n):
        acc = np.einsum("cij,ocab->oiajb", shifted[i], w.data.astype(np.float64))
        acc = acc.reshape(spec.out_channels, 2 * h, 2 * wd) + bias_acc[:, None, None]
        outs.append(_requantize_acc(acc, acc_scale, out_params))
    out = np.stack(outs)
    if counter is not None:
        counter.add(name, spec.in_channels * spec.out_channels * 4
                    * out.shape[2] * out.shape[3] * n)
    return Tensor(out, "i8", quant=out_params)


def maxpool2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; works on float and integer codes alike."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    pooled = x.data.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))
    return Tensor(pooled, x.dtype, quant=x.quant)


def nn_upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling (each pixel becomes a 2x2 block)."""
    up = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return Tensor(up, x.dtype, quant=x.quant)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the channel axis, a's channels first."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"spatial/batch mismatch: {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ShapeError(f"dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.dtype != "f32" and a.quant != b.quant:
        raise ShapeError("quantized concat requires identical quant params")
    return Tensor(np.concatenate([a.data, b.data], axis=1), a.dtype, quant=a.quant)


def relu(x: Tensor) -> Tensor:
    if x.dtype == "f32":
        return Tensor(np.maximum(x.data, 0), "f32")
    # integer domain: zero is the zero-point code
    return Tensor(np.maximum(x.data, x.quant.zero_point), x.dtype, quant=x.quant)


_SIG_LO = np.nextafter(np.float32(0.0), np.float32(1.0))
_SIG_HI = np.nextafter(np.float32(1.0), np.float32(0.0))


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    # keep the codomain open in f32: saturated logits land one ulp inside
    return Tensor(np.clip(out, _SIG_LO, _SIG_HI), "f32")


def requantize(x: Tensor, new_params: QuantParams) -> Tensor:
    """Re-express integer codes under different quantization parameters."""
    if x.quant is None:
        raise ShapeError("requantize expects a quantized tensor")
    if x.quant == new_params:
        return x
    real = (x.data.astype(np.float64) - x.quant.zero_point) * x.quant.scale
    codes = np.round(real / new_params.scale) + new_params.zero_point
    q = np.clip(codes, new_params.qmin, new_params.qmax).astype(np.int8)
    return Tensor(q, "i8", quant=new_params)
