import numpy as np
import pytest

from conftest import make_model
from unetlite.errors import CalibrationError, UsageError
from unetlite.model import UNetConfig, forward
from unetlite.quant import (CalibrationStats, QuantScheme, calibrate,
                            quantize_model, quantized_size)
from unetlite.tensor import Tensor

CFG = UNetConfig(blocks=2, base_channels=4, input_size=(16, 16))


def batches_for(rng, n=3, size=(16, 16)):
    return [Tensor(rng.random((1, 3, *size), dtype=np.float32), "f32")
            for _ in range(n)]


def test_calibrate_requires_batches(tiny_model):
    with pytest.raises(UsageError):
        calibrate(tiny_model, [], QuantScheme())


def test_calibrate_constant_batch(tiny_model):
    zeros = Tensor(np.zeros((1, 3, 16, 16), dtype=np.float32), "f32")
    stats = calibrate(tiny_model, [zeros], QuantScheme(skip_first_layer=False))
    s = stats.sites["input"]
    assert s.min == s.max == 0.0
    # zero input: the first conv collapses exactly to its (relu'd) bias
    b = np.maximum(tiny_model.biases["enc0.conv0.bias"], 0)
    assert stats.sites["enc0.conv0"].min == b.min()
    assert stats.sites["enc0.conv0"].max == b.max()
    # the sigmoid-output site stays inside (0, 1)
    f = stats.sites["output"]
    assert 0.0 < f.min <= f.max < 1.0


def test_calibrate_merges_batches(tiny_model, rng):
    b1, b2 = batches_for(rng, 2)
    s12 = calibrate(tiny_model, [b1, b2], QuantScheme())
    s1 = calibrate(tiny_model, [b1], QuantScheme())
    s2 = calibrate(tiny_model, [b2], QuantScheme())
    for site in s12.sites:
        assert s12.sites[site].min == min(s1.sites[site].min, s2.sites[site].min)
        assert s12.sites[site].max == max(s1.sites[site].max, s2.sites[site].max)


def test_quantize_model_skip_first_keeps_float(tiny_model, rng):
    scheme = QuantScheme(weight_bits=8, act_bits=8, skip_first_layer=True)
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    q = quantize_model(tiny_model, stats, scheme)
    w0 = q.weights["enc0.conv0.weight"]
    assert w0.dtype == "f32"
    assert np.array_equal(w0.data, tiny_model.weights["enc0.conv0.weight"].data)
    assert q.weights["enc0.conv1.weight"].dtype == "i8"
    assert q.mode == "int"


def test_quantize_model_deterministic(tiny_model, rng):
    scheme = QuantScheme()
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    q1 = quantize_model(tiny_model, stats, scheme)
    q2 = quantize_model(tiny_model, stats, scheme)
    for name in q1.weights:
        assert np.array_equal(q1.weights[name].data, q2.weights[name].data)


def test_quantize_missing_site_named(tiny_model, rng):
    scheme = QuantScheme()
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    del stats.sites["mid.conv1"]
    with pytest.raises(CalibrationError, match="mid.conv1"):
        quantize_model(tiny_model, stats, scheme)


def test_binary_weights_two_levels(tiny_model, rng):
    scheme = QuantScheme(weight_bits=1, act_bits=4, skip_first_layer=True)
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    q = quantize_model(tiny_model, stats, scheme)
    assert q.mode == "emulated"
    for d in q.layers:
        w = q.weights[d.name + ".weight"]
        if d.name == "enc0.conv0":
            continue
        assert w.dtype == "f32"
        mags = np.unique(np.abs(w.data))
        assert len(mags) <= 2  # {0?, s} -- sign split of one magnitude
        assert len(np.unique(w.data)) <= 2


def test_w1a4_forward_grid(tiny_model, rng):
    """4-bit activations: every post-site tensor lands on <= 16 levels."""
    scheme = QuantScheme(weight_bits=1, act_bits=4, skip_first_layer=False)
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    q = quantize_model(tiny_model, stats, scheme)
    seen = {}
    x = batches_for(rng, 1)[0]
    forward(q, x, site_hook=lambda s, a: seen.__setitem__(s, len(np.unique(a))))
    for site, n in seen.items():
        assert n <= 16, site


def test_int8_forward_close_to_float(rng):
    model = make_model(CFG, seed=21)
    scheme = QuantScheme(weight_bits=8, act_bits=8, skip_first_layer=True)
    calib = batches_for(rng, 4)
    stats = calibrate(model, calib, scheme)
    q = quantize_model(model, stats, scheme)
    x = batches_for(rng, 1)[0]
    pf = forward(model, x).data
    pq = forward(q, x).data
    assert np.abs(pf - pq).mean() <= 0.05


def test_percentile_calibration_tightens_range(rng):
    model = make_model(CFG, seed=9)
    minmax = QuantScheme(calibration_mode="minmax")
    pct = QuantScheme(calibration_mode="percentile", percentile=0.9)
    batches = batches_for(rng, 3)
    s_mm = calibrate(model, batches, minmax)
    s_p = calibrate(model, batches, pct)
    tighter = 0
    for site in s_mm.sites:
        lo_m, hi_m = s_mm.range_for(site, minmax)
        lo_p, hi_p = s_p.range_for(site, pct)
        assert lo_p >= lo_m - 1e-9 and hi_p <= hi_m + 1e-9
        if hi_p < hi_m - 1e-9 or lo_p > lo_m + 1e-9:
            tighter += 1
    assert tighter > 0


def test_quantized_size_rules(tiny_model, rng):
    n_params = sum(d.n_params for d in tiny_model.layers)
    assert quantized_size(tiny_model) == n_params * 4
    scheme = QuantScheme(skip_first_layer=True)
    stats = calibrate(tiny_model, batches_for(rng), scheme)
    q = quantize_model(tiny_model, stats, scheme)
    first = tiny_model.layers[0].n_params
    assert quantized_size(q) == first * 4 + (n_params - first) * 1
    assert quantized_size(q) < quantized_size(tiny_model)


def test_default_config_float_size():
    model_params = 1_941_105
    from unetlite.analyzer import count_params
    from unetlite.model import UNetConfig, bind_weights, build, random_store
    cfg = UNetConfig()
    assert count_params(cfg) == model_params
    model = bind_weights(build(cfg), random_store(cfg, seed=0))
    assert quantized_size(model) == model_params * 4 == 7_764_420


def test_quantized_save_load_round_trip(tmp_path, rng):
    from unetlite.model import load_model, save_model
    model = make_model(CFG, seed=33)
    scheme = QuantScheme(weight_bits=8, act_bits=8, skip_first_layer=True)
    stats = calibrate(model, batches_for(rng, 2), scheme)
    q = quantize_model(model, stats, scheme)
    save_model(q, tmp_path / "q")
    back = load_model(tmp_path / "q")
    assert back.mode == "int"
    x = batches_for(rng, 1)[0]
    assert np.array_equal(forward(q, x).data, forward(back, x).data)
