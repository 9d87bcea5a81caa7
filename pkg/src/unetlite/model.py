"""U-Net graph construction, weight binding, and forward execution.

The graph is generated deterministically from a UNetConfig:

    encoder block b: conv3x3 -> relu -> conv3x3 -> relu -> maxpool
    middle:          conv3x3 -> relu -> conv3x3 -> relu
    decoder block b: up (tconv2x2 or nn-upsample + conv2x2) ->
                     concat(up, skip_b) -> conv3x3 -> relu -> conv3x3 -> relu
    final:           conv1x1 -> sigmoid

Up layers carry no activation.  Channel width at depth d is
base_channels * 2**d; the decoder mirrors the encoder.  Layer names follow
the storage convention (enc{b}.conv{0|1}, mid.conv{0|1}, dec{b}.up,
dec{b}.conv{0|1}, final.conv), each with .weight/.bias tensors.

A bound model is immutable in practice (weights are immutable Tensors);
forwards never mutate model state and may run concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .errors import BindingError, ConfigError, DataError, ShapeError
from .ops import ConvSpec, MacCounter
from .store import (RESERVED_SUFFIXES, WeightStore, read_store, write_store)
from .tensor import (QuantParams, Tensor, affine_params, dequantize,
                     fake_quantize, quantize)

TRANSPOSED_CONV = "transposed_conv"
NN_UPSAMPLE_CONV = "nn_upsample_conv"

_UPSAMPLE_JSON = {TRANSPOSED_CONV: "tconv", NN_UPSAMPLE_CONV: "nn_upsample_conv"}
_UPSAMPLE_FROM_JSON = {"tconv": TRANSPOSED_CONV, "transposed_conv": TRANSPOSED_CONV,
                       "nn_upsample_conv": NN_UPSAMPLE_CONV}


@dataclass(frozen=True)
class UNetConfig:
    """Architecture descriptor; generates the whole graph deterministically."""

    blocks: int = 4
    base_channels: int = 16
    in_channels: int = 3
    out_channels: int = 1
    upsample_mode: str = TRANSPOSED_CONV
    input_size: tuple[int, int] = (256, 256)

    def __post_init__(self):
        if not 1 <= self.blocks <= 4:
            raise ConfigError(f"blocks must be in [1, 4], got {self.blocks}")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.upsample_mode not in (TRANSPOSED_CONV, NN_UPSAMPLE_CONV):
            raise ConfigError(f"unknown upsample mode {self.upsample_mode!r}")
        h, w = self.input_size
        div = 2 ** self.blocks
        if h % div or w % div:
            raise ConfigError(
                f"input size {h}x{w} not divisible by 2^blocks = {div}")

    def width(self, depth: int) -> int:
        return self.base_channels * 2 ** depth

    def to_json(self) -> dict:
        return {
            "blocks": self.blocks,
            "base_channels": self.base_channels,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "upsample": _UPSAMPLE_JSON[self.upsample_mode],
            "input_size": list(self.input_size),
        }

    @staticmethod
    def from_json(obj: dict) -> "UNetConfig":
        try:
            mode = _UPSAMPLE_FROM_JSON[obj.get("upsample", "tconv")]
        except KeyError:
            raise ConfigError(f"unknown upsample mode {obj.get('upsample')!r}")
        return UNetConfig(
            blocks=int(obj["blocks"]),
            base_channels=int(obj["base_channels"]),
            in_channels=int(obj.get("in_channels", 3)),
            out_channels=int(obj.get("out_channels", 1)),
            upsample_mode=mode,
            input_size=tuple(obj.get("input_size", (256, 256))),
        )


@dataclass(frozen=True)
class LayerDef:
    """One weighted layer of the generated graph."""

    name: str
    kind: str          # "conv" | "tconv" | "upconv" (2x2 conv after nn-upsample)
    path: str          # "enc" | "mid" | "dec" | "final"
    in_channels: int
    out_channels: int
    kernel: tuple[int, int]
    out_hw: tuple[int, int]
    activation: str    # "relu" | "none" | "sigmoid"

    @property
    def n_params(self) -> int:
        kh, kw = self.kernel
        return self.in_channels * self.out_channels * kh * kw + self.out_channels

    @property
    def macs(self) -> int:
        # one MAC = one multiply-accumulate pair; transposed convs counted
        # output-centric (kernel positions over implicit zeros included)
        kh, kw = self.kernel
        ho, wo = self.out_hw
        return self.in_channels * self.out_channels * kh * kw * ho * wo

    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, *self.kernel)


def layer_defs(config: UNetConfig) -> list[LayerDef]:
    """Ordered weighted-layer list for a config (execution order)."""
    defs: list[LayerDef] = []
    h, w = config.input_size
    c_in = config.in_channels
    for b in range(config.blocks):
        c = config.width(b)
        defs.append(LayerDef(f"enc{b}.conv0", "conv", "enc", c_in, c, (3, 3), (h, w), "relu"))
        defs.append(LayerDef(f"enc{b}.conv1", "conv", "enc", c, c, (3, 3), (h, w), "relu"))
        c_in = c
        h, w = h // 2, w // 2
    mid = config.width(config.blocks)
    defs.append(LayerDef("mid.conv0", "conv", "mid", c_in, mid, (3, 3), (h, w), "relu"))
    defs.append(LayerDef("mid.conv1", "conv", "mid", mid, mid, (3, 3), (h, w), "relu"))
    c_in = mid
    up_kind = "tconv" if config.upsample_mode == TRANSPOSED_CONV else "upconv"
    for b in reversed(range(config.blocks)):
        c = config.width(b)
        h, w = h * 2, w * 2
        defs.append(LayerDef(f"dec{b}.up", up_kind, "dec", c_in, c, (2, 2), (h, w), "none"))
        defs.append(LayerDef(f"dec{b}.conv0", "conv", "dec", 2 * c, c, (3, 3), (h, w), "relu"))
        defs.append(LayerDef(f"dec{b}.conv1", "conv", "dec", c, c, (3, 3), (h, w), "relu"))
        c_in = c
    defs.append(LayerDef("final.conv", "conv", "final", c_in, config.out_channels,
                         (1, 1), (h, w), "sigmoid"))
    return defs


def activation_sites(config: UNetConfig, skip_first_layer: bool = False) -> list[str]:
    """Names of every tensor site that gets quantization parameters.

    Sites are the network input, each weighted-layer output (post
    activation) and each decoder concat output.  With skip_first_layer the
    input site is dropped (the first conv runs in float).
    """
    sites = [] if skip_first_layer else ["input"]
    for d in layer_defs(config):
        if d.name.startswith("dec") and d.name.endswith(".conv0"):
            sites.append(d.name.replace(".conv0", ".concat"))
        sites.append(d.name)
    return sites


@dataclass
class QuantInfo:
    """Quantization state attached to a quantized model."""

    weight_bits: int
    act_bits: int
    skip_first_layer: bool
    mode: str                      # "int" or "emulated"
    act_params: dict[str, QuantParams] = field(default_factory=dict)
    act_ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "weight_bits": self.weight_bits,
            "act_bits": self.act_bits,
            "skip_first_layer": self.skip_first_layer,
            "mode": self.mode,
        }


@dataclass
class UNetModel:
    """A built (and optionally bound, optionally quantized) U-Net."""

    config: UNetConfig
    layers: list[LayerDef]
    weights: dict[str, Tensor] = field(default_factory=dict)   # "<layer>.weight"
    biases: dict[str, np.ndarray] = field(default_factory=dict)  # "<layer>.bias"
    quant: QuantInfo | None = None

    @property
    def bound(self) -> bool:
        return all(d.name + ".weight" in self.weights for d in self.layers)

    @property
    def mode(self) -> str:
        return self.quant.mode if self.quant else "float"

    def layer(self, name: str) -> LayerDef:
        for d in self.layers:
            if d.name == name:
                return d
        raise KeyError(name)

    def first_conv(self) -> LayerDef:
        return self.layers[0]


def build(config: UNetConfig) -> UNetModel:
    """Construct the (unbound) model graph for a config."""
    return UNetModel(config=config, layers=layer_defs(config))


def expected_tensor_names(model: UNetModel) -> dict[str, tuple[int, ...]]:
    names = {}
    for d in model.layers:
        names[d.name + ".weight"] = d.weight_shape()
        names[d.name + ".bias"] = (d.out_channels,)
    return names


def bind_weights(model: UNetModel, store: WeightStore) -> UNetModel:
    """Attach store tensors to the model; strict about names and shapes.

    Float stores carry f32 weights.  Quantized stores carry i8 weights with
    ``.scale``/``.zero_point`` companions (except layers kept in float).
    Missing and unexpected tensors are both binding errors.
    """
    expected = expected_tensor_names(model)
    missing = [n for n in expected if n not in store]
    extra = [n for n in store.weight_names() if n not in expected]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing tensors: {', '.join(sorted(missing))}")
        if extra:
            parts.append(f"unexpected tensors: {', '.join(sorted(extra))}")
        raise BindingError("; ".join(parts))

    weight_bits = model.quant.weight_bits if model.quant else 8
    weights: dict[str, Tensor] = {}
    biases: dict[str, np.ndarray] = {}
    for name, shape in expected.items():
        st = store.get(name)
        if tuple(st.array.shape) != shape:
            raise BindingError(
                f"shape mismatch for {name!r}: store has {tuple(st.array.shape)}, "
                f"model wants {shape}")
        if name.endswith(".bias"):
            if st.dtype != "f32":
                raise BindingError(f"{name!r} must be f32")
            biases[name] = st.array.astype(np.float32)
            continue
        if st.dtype == "f32":
            weights[name] = Tensor(st.array, "f32")
        elif st.dtype == "i8":
            try:
                scale = float(store.get(name + ".scale").array.reshape(-1)[0])
                zp = int(store.get(name + ".zero_point").array.reshape(-1)[0])
            except Exception as e:
                raise BindingError(f"{name!r}: missing quant params ({e})") from e
            p = QuantParams(bits=weight_bits, scale=scale, zero_point=zp, signed=True)
            weights[name] = Tensor(st.array, "i8", quant=p)
        else:
            raise BindingError(f"{name!r}: unsupported weight dtype {st.dtype}")
    model.weights = weights
    model.biases = biases
    return model


def _require_bound(model: UNetModel):
    if not model.bound:
        raise BindingError("model has no bound weights; call bind_weights first")


def _conv_spec(d: LayerDef, model: UNetModel) -> ConvSpec:
    return ConvSpec(in_channels=d.in_channels, out_channels=d.out_channels,
                    kernel=d.kernel, stride=1, padding="same",
                    bias=model.biases[d.name + ".bias"])


def _tconv_spec(d: LayerDef, model: UNetModel) -> ConvSpec:
    return ConvSpec(in_channels=d.in_channels, out_channels=d.out_channels,
                    kernel=(2, 2), stride=2, padding="none",
                    bias=model.biases[d.name + ".bias"])


def forward(model: UNetModel, x: Tensor,
            mac_counter: MacCounter | None = None,
            site_hook=None) -> Tensor:
    """Run the network on an (N, in_channels, H, W) f32 tensor in [0, 1].

    Returns per-pixel probabilities (N, out_channels, H, W).  ``site_hook``
    (if given) is called as hook(site_name, float_array) at every
    quantization site of the float path; it is how calibration observes
    activations.
    """
    _require_bound(model)
    cfg = model.config
    if x.dtype != "f32":
        raise ShapeError("forward expects an f32 input tensor")
    if x.data.ndim != 4 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"input must be (N,{cfg.in_channels},H,W), got {x.shape}")
    if (x.shape[2], x.shape[3]) != cfg.input_size:
        raise ShapeError(f"input spatial size {x.shape[2:]} != {cfg.input_size}")
    if model.mode == "int":
        return _forward_int(model, x, mac_counter)
    return _forward_float(model, x, mac_counter, site_hook)


def _emulate(model: UNetModel, site: str, t: Tensor) -> Tensor:
    """Fake-quantize an activation site in emulated mode; no-op otherwise."""
    if model.mode != "emulated":
        return t
    p = model.quant.act_params.get(site)
    if p is None:
        return t
    return fake_quantize(t, p)


def _forward_float(model: UNetModel, x: Tensor, counter, site_hook) -> Tensor:
    cfg = model.config

    def tap(site: str, t: Tensor) -> Tensor:
        t = _emulate(model, site, t)
        if site_hook is not None:
            site_hook(site, t.data)
        return t

    def run_layer(name: str, t: Tensor) -> Tensor:
        d = model.layer(name)
        w = model.weights[name + ".weight"]
        if w.dtype != "f32":
            raise BindingError(f"{name}: integer weights in a float-path model")
        if d.kind == "tconv":
            out = ops.tconv2d(t, w, _tconv_spec(d, model), counter, name)
        elif d.kind == "upconv":
            up = ops.nn_upsample2(t)
            out = ops.conv2d(up, w, _conv_spec(d, model), counter, name)
        else:
            out = ops.conv2d(t, w, _conv_spec(d, model), counter, name)
        if d.activation == "relu":
            out = ops.relu(out)
        if d.activation != "sigmoid":
            return tap(name, out)
        # the quantized site of a sigmoid layer is its pre-activation logits
        # (the sigmoid itself always runs in float); the probability output
        # is observed as its own, never-quantized site
        out = ops.sigmoid(tap(name, out))
        if site_hook is not None:
            site_hook("output", out.data)
        return out

    t = tap("input", x)
    skips: list[Tensor] = []
    for b in range(cfg.blocks):
        t = run_layer(f"enc{b}.conv0", t)
        t = run_layer(f"enc{b}.conv1", t)
        skips.append(t)
        t = ops.maxpool2(t)
    t = run_layer("mid.conv0", t)
    t = run_layer("mid.conv1", t)
    for b in reversed(range(cfg.blocks)):
        t = run_layer(f"dec{b}.up", t)
        t = tap(f"dec{b}.concat", ops.concat_channels(t, skips[b]))
        t = run_layer(f"dec{b}.conv0", t)
        t = run_layer(f"dec{b}.conv1", t)
    return run_layer("final.conv", t)


def _forward_int(model: UNetModel, x: Tensor, counter) -> Tensor:
    cfg = model.config
    qi = model.quant
    params = qi.act_params

    def site_params(site: str) -> QuantParams:
        if site not in params:
            raise BindingError(f"no activation params for site {site!r}")
        return params[site]

    def run_layer(name: str, t: Tensor) -> Tensor:
        d = model.layer(name)
        w = model.weights[name + ".weight"]
        out_p = site_params(name)
        if w.dtype == "f32":
            # skipped first layer: float conv on the float input
            out = ops.conv2d(t, w, _conv_spec(d, model), counter, name)
            if d.activation == "relu":
                out = ops.relu(out)
            return quantize(out, out_p)
        if d.kind == "tconv":
            out = ops.tconv2d_quant(t, w, _tconv_spec(d, model), out_p, counter, name)
        elif d.kind == "upconv":
            up = ops.nn_upsample2(t)
            out = ops.conv2d_quant(up, w, _conv_spec(d, model), out_p, counter, name)
        else:
            out = ops.conv2d_quant(t, w, _conv_spec(d, model), out_p, counter, name)
        if d.activation == "relu":
            out = ops.relu(out)
        return out

    if qi.skip_first_layer:
        t = run_layer("enc0.conv0", x)  # float conv, quantized output
    else:
        t = quantize(x, site_params("input"))
        t = run_layer("enc0.conv0", t)
    skips: list[Tensor] = []
    for b in range(cfg.blocks):
        if b > 0:
            t = run_layer(f"enc{b}.conv0", t)
        t = run_layer(f"enc{b}.conv1", t)
        skips.append(t)
        t = ops.maxpool2(t)
    t = run_layer("mid.conv0", t)
    t = run_layer("mid.conv1", t)
    for b in reversed(range(cfg.blocks)):
        t = run_layer(f"dec{b}.up", t)
        cp = site_params(f"dec{b}.concat")
        t = ops.concat_channels(ops.requantize(t, cp), ops.requantize(skips[b], cp))
        t = run_layer(f"dec{b}.conv0", t)
        t = run_layer(f"dec{b}.conv1", t)
    # final conv requantizes to its calibrated logit range; sigmoid runs in float
    d = model.layer("final.conv")
    w = model.weights["final.conv.weight"]
    logits = ops.conv2d_quant(t, w, _conv_spec(d, model), site_params("final.conv"),
                              counter, "final.conv")
    return ops.sigmoid(dequantize(logits))


# --- model directory persistence -------------------------------------------

CONFIG_FILE = "config.json"
WEIGHTS_FILE = "weights.unw1"


def save_model(model: UNetModel, directory: str | Path):
    """Write config.json + weights.unw1 describing a bound model."""
    _require_bound(model)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = model.config.to_json()
    store = WeightStore()
    for d in model.layers:
        wname = d.name + ".weight"
        w = model.weights[wname]
        store.put(wname, w.data, w.dtype)
        if w.dtype == "i8":
            store.put(wname + ".scale", np.array([w.quant.scale], dtype=np.float32), "f32")
            store.put(wname + ".zero_point", np.array([w.quant.zero_point], dtype=np.int32), "i32")
        store.put(d.name + ".bias", model.biases[d.name + ".bias"], "f32")
    if model.quant is not None:
        cfg["quant"] = model.quant.to_json()
        for site, (lo, hi) in sorted(model.quant.act_ranges.items()):
            store.put(site + ".calib.min", np.array([lo], dtype=np.float32), "f32")
            store.put(site + ".calib.max", np.array([hi], dtype=np.float32), "f32")
    (directory / CONFIG_FILE).write_text(json.dumps(cfg, indent=2) + "\n")
    write_store(store, directory / WEIGHTS_FILE)


def load_model(directory: str | Path) -> UNetModel:
    """Read a model directory written by save_model (or the trainer export)."""
    directory = Path(directory)
    cfg_path = directory / CONFIG_FILE
    if not cfg_path.is_file():
        raise DataError(f"missing {cfg_path}")
    try:
        obj = json.loads(cfg_path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{cfg_path}: invalid JSON ({e})") from e
    config = UNetConfig.from_json(obj)
    model = build(config)
    store = read_store(directory / WEIGHTS_FILE)
    q = obj.get("quant")
    if q:
        info = QuantInfo(weight_bits=int(q["weight_bits"]), act_bits=int(q["act_bits"]),
                         skip_first_layer=bool(q["skip_first_layer"]), mode=q["mode"])
        for site in activation_sites(config, info.skip_first_layer):
            try:
                lo = float(store.get(site + ".calib.min").array.reshape(-1)[0])
                hi = float(store.get(site + ".calib.max").array.reshape(-1)[0])
            except Exception as e:
                raise BindingError(f"quantized model missing calibration for {site!r}") from e
            info.act_ranges[site] = (lo, hi)
            info.act_params[site] = affine_params(lo, hi, info.act_bits)
        model.quant = info
    return bind_weights(model, store)


def random_store(config: UNetConfig, seed: int = 0, logit_gain: float = 1.0) -> WeightStore:
    """He-initialized random float weights for a config (benchmarks, tests)."""
    rng = np.random.default_rng(seed)
    store = WeightStore()
    for d in layer_defs(config):
        kh, kw = d.kernel
        fan_in = d.in_channels * kh * kw
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=d.weight_shape()).astype(np.float32)
        b = rng.normal(0.0, 0.05, size=(d.out_channels,)).astype(np.float32)
        if d.path == "final":
            w *= logit_gain
            b *= logit_gain
        store.put(d.name + ".weight", w, "f32")
        store.put(d.name + ".bias", b, "f32")
    return store
