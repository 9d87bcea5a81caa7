"""Core tensor container and quantization primitives.

Tensors wrap a C-contiguous numpy array with an explicit dtype tag
(f32, i8 or i32) and, for integer payloads, the quantization parameters
needed to map codes back to real values.  Activations use N,C,H,W layout;
convolution weights use O,I,Kh,Kw.  Tensors are immutable after
construction (the underlying buffer is marked read-only) so they can be
shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError

DTYPES = {
    "f32": np.float32,
    "i8": np.int8,
    "i32": np.int32,
}

DTYPE_BYTES = {"f32": 4, "i8": 1, "i32": 4}


@dataclass(frozen=True)
class QuantParams:
    """Per-tensor quantization parameters.

    bits=1 is the binary-weight special case: codes are {-1, +1} and the
    scale is chosen by the caller (mean absolute value for weights).
    """

    bits: int
    scale: float
    zero_point: int = 0
    signed: bool = True

    def __post_init__(self):
        if not 1 <= self.bits <= 8:
            raise NumericError(f"bits must be in [1, 8], got {self.bits}")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise NumericError(f"scale must be positive and finite, got {self.scale}")
        if self.qmax > 127:
            raise NumericError("codes must fit i8 storage; use signed params for 8-bit")
        if self.bits > 1 and not self.qmin <= self.zero_point <= self.qmax:
            raise NumericError(
                f"zero_point {self.zero_point} outside code range [{self.qmin}, {self.qmax}]"
            )
        if self.bits == 1 and self.zero_point != 0:
            raise NumericError("binary quantization is symmetric (zero_point must be 0)")

    @property
    def qmin(self) -> int:
        if self.bits == 1:
            return -1
        if self.signed:
            # symmetric schemes (zero_point == 0) give up the most negative code
            if self.zero_point == 0:
                return -(2 ** (self.bits - 1) - 1)
            return -(2 ** (self.bits - 1))
        return 0

    @property
    def qmax(self) -> int:
        if self.bits == 1:
            return 1
        if self.signed:
            return 2 ** (self.bits - 1) - 1
        return 2 ** self.bits - 1

    def range_f32(self) -> tuple[float, float]:
        """Real-valued range representable under these parameters."""
        return (
            (self.qmin - self.zero_point) * self.scale,
            (self.qmax - self.zero_point) * self.scale,
        )


class Tensor:
    """N-dimensional numeric array with explicit dtype and optional quant params."""

    __slots__ = ("data", "dtype", "quant")

    def __init__(self, data: np.ndarray, dtype: str, quant: QuantParams | None = None):
        if dtype not in DTYPES:
            raise NumericError(f"unknown dtype {dtype!r}")
        arr = np.ascontiguousarray(data, dtype=DTYPES[dtype])
        if arr.ndim < 1 or any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dims must be >= 1, got shape {arr.shape}")
        if dtype == "f32" and quant is not None:
            raise NumericError("f32 tensors carry no quant params")
        if dtype != "f32" and quant is None:
            raise NumericError(f"{dtype} tensor requires quant params")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dtype", dtype)
        object.__setattr__(self, "quant", quant)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    # immutable: sharing is always safe
    def __copy__(self):
        return self

    def __deepcopy__(self, memo):
        return self

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.size * DTYPE_BYTES[self.dtype]

    def __repr__(self):
        q = f", quant={self.quant}" if self.quant else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{q})"

    @staticmethod
    def f32(data: np.ndarray) -> "Tensor":
        return Tensor(data, "f32")


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise NumericError("input contains non-finite values")


def quantize(x: Tensor, p: QuantParams) -> Tensor:
    """Quantize an f32 tensor to integer codes under ``p``.

    Uses round-half-to-even, then clamps to the representable code range.
    bits=1 maps to sign codes {-1, +1} (ties at zero go to +1).
    """
    if x.dtype != "f32":
        raise NumericError("quantize expects an f32 tensor")
    _check_finite(x.data)
    if p.bits == 1:
        q = np.where(x.data >= 0, 1, -1).astype(np.int8)
    else:
        codes = np.round(x.data.astype(np.float64) / p.scale) + p.zero_point
        q = np.clip(codes, p.qmin, p.qmax).astype(np.int8)
    return Tensor(q, "i8", quant=p)


def dequantize(x: Tensor) -> Tensor:
    """Map integer codes back to f32 reals: (q - zero_point) * scale."""
    if x.quant is None:
        raise NumericError("dequantize expects a quantized tensor")
    p = x.quant
    out = (x.data.astype(np.float32) - p.zero_point) * np.float32(p.scale)
    return Tensor(out, "f32")


def fake_quantize(x: Tensor, p: QuantParams) -> Tensor:
    """Quantize-then-dequantize an f32 tensor, staying in f32.

    Output takes at most 2**bits distinct values.  For bits=1 every element
    maps to {-s, +s} where s is the mean absolute value of the input
    (binary-weight scaling); ``p.scale`` is ignored in that case.
    """
    if x.dtype != "f32":
        raise NumericError("fake_quantize expects an f32 tensor")
    _check_finite(x.data)
    if p.bits == 1:
        s = np.float32(np.mean(np.abs(x.data)))
        if s == 0:
            return Tensor(np.zeros_like(x.data), "f32")
        return Tensor(np.where(x.data >= 0, s, -s).astype(np.float32), "f32")
    return dequantize(quantize(x, p))


def symmetric_params(x: np.ndarray, bits: int) -> QuantParams:
    """Symmetric per-tensor params covering max|x| (weights convention).

    bits=1 returns the mean-absolute-value binary scale.
    """
    _check_finite(x)
    if bits == 1:
        s = float(np.mean(np.abs(x)))
        return QuantParams(bits=1, scale=s if s > 0 else 1.0, zero_point=0, signed=True)
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    qmax = 2 ** (bits - 1) - 1
    scale = amax / qmax if amax > 0 else 1.0
    return QuantParams(bits=bits, scale=scale, zero_point=0, signed=True)


def affine_params(rmin: float, rmax: float, bits: int) -> QuantParams:
    """Affine per-tensor params for an observed range (activations convention).

    The range is widened to include zero so that zero is exactly
    representable; codes live in the signed i8 range for any bit width.
    """
    if not (np.isfinite(rmin) and np.isfinite(rmax)) or rmin > rmax:
        raise NumericError(f"bad calibration range [{rmin}, {rmax}]")
    rmin, rmax = min(rmin, 0.0), max(rmax, 0.0)
    qmin, qmax = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    if rmax == rmin:
        return QuantParams(bits=bits, scale=1.0, zero_point=0, signed=True)
    scale = (rmax - rmin) / (qmax - qmin)
    zp = int(round(qmin - rmin / scale))
    zp = max(qmin, min(qmax, zp))
    if zp == 0:
        # zero_point 0 means the symmetric code range [-(qmax), qmax]; widen
        # the scale so a nearly-symmetric observed range still fits entirely
        scale = max(rmax, -rmin) / qmax
    return QuantParams(bits=bits, scale=scale, zero_point=zp, signed=True)
