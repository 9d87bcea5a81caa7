import numpy as np
import pytest

import oracles
from conftest import make_model
from unetlite.errors import BindingError, ConfigError, ShapeError
from unetlite.model import (NN_UPSAMPLE_CONV, UNetConfig, bind_weights, build,
                            forward, layer_defs, random_store)
from unetlite.ops import MacCounter
from unetlite.tensor import Tensor


def test_config_validation():
    with pytest.raises(ConfigError):
        UNetConfig(blocks=5)
    with pytest.raises(ConfigError):
        UNetConfig(blocks=0)
    with pytest.raises(ConfigError):
        UNetConfig(blocks=3, input_size=(100, 100))  # 100 % 8 != 0
    with pytest.raises(ConfigError):
        UNetConfig(upsample_mode="bilinear")


def test_default_config_has_23_weighted_layers():
    defs = layer_defs(UNetConfig())
    assert len(defs) == 23
    assert sum(d.kind == "conv" for d in defs) == 19  # 18 convs + final 1x1
    assert sum(d.kind == "tconv" for d in defs) == 4


def test_single_block_layer_sequence():
    cfg = UNetConfig(blocks=1, base_channels=2, input_size=(16, 16))
    defs = layer_defs(cfg)
    got = [(d.name, d.in_channels, d.out_channels) for d in defs]
    assert got == [
        ("enc0.conv0", 3, 2), ("enc0.conv1", 2, 2),
        ("mid.conv0", 2, 4), ("mid.conv1", 4, 4),
        ("dec0.up", 4, 2), ("dec0.conv0", 4, 2), ("dec0.conv1", 2, 2),
        ("final.conv", 2, 1),
    ]
    assert sum(d.n_params for d in defs) == 467


def test_upsample_modes_have_equal_params():
    for blocks in (1, 2, 3, 4):
        for base in (4, 16):
            a = UNetConfig(blocks=blocks, base_channels=base)
            b = UNetConfig(blocks=blocks, base_channels=base,
                           upsample_mode=NN_UPSAMPLE_CONV)
            pa = sum(d.n_params for d in layer_defs(a))
            pb = sum(d.n_params for d in layer_defs(b))
            assert pa == pb


def test_bind_weights_success_and_missing(tiny_config):
    store = random_store(tiny_config, seed=3)
    model = bind_weights(build(tiny_config), store)
    assert model.bound
    del store.tensors["final.conv.weight"]
    with pytest.raises(BindingError, match="final.conv.weight"):
        bind_weights(build(tiny_config), store)


def test_bind_weights_shape_fuzz(tiny_config, rng):
    store = random_store(tiny_config, seed=3)
    name = "enc0.conv0.weight"  # (4,3,3,3): transposing channels changes shape
    good = store.get(name).array
    store.tensors[name].array = np.ascontiguousarray(good.transpose(1, 0, 2, 3))
    with pytest.raises(BindingError, match=name):
        bind_weights(build(tiny_config), store)
    # a randomly fattened kernel must also be rejected
    store2 = random_store(tiny_config, seed=3)
    store2.tensors[name].array = rng.normal(size=(4, 3, 5, 5)).astype(np.float32)
    with pytest.raises(BindingError, match=name):
        bind_weights(build(tiny_config), store2)


def test_bind_weights_rejects_extras(tiny_config):
    store = random_store(tiny_config, seed=3)
    store.put("stray.weight", np.zeros((1, 1, 1, 1), dtype=np.float32), "f32")
    with pytest.raises(BindingError, match="stray.weight"):
        bind_weights(build(tiny_config), store)


def test_forward_zero_weights_gives_half(tiny_config):
    model = build(tiny_config)
    store = random_store(tiny_config, seed=0)
    for name in list(store.tensors):
        store.tensors[name].array = np.zeros_like(store.tensors[name].array)
    model = bind_weights(model, store)
    x = Tensor(np.random.default_rng(0).random((2, 3, 16, 16), dtype=np.float32), "f32")
    out = forward(model, x)
    assert out.shape == (2, 1, 16, 16)
    assert np.allclose(out.data, 0.5)


def test_forward_shapes_and_range(tiny_model, rng):
    x = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32), "f32")
    out = forward(tiny_model, x)
    assert out.shape == (1, 1, 16, 16)
    assert (out.data > 0).all() and (out.data < 1).all()


def test_forward_batch_independence(tiny_model, rng):
    a = rng.random((1, 3, 16, 16), dtype=np.float32)
    b = rng.random((1, 3, 16, 16), dtype=np.float32)
    both = forward(tiny_model, Tensor(np.concatenate([a, b]), "f32")).data
    one = forward(tiny_model, Tensor(a, "f32")).data
    two = forward(tiny_model, Tensor(b, "f32")).data
    assert np.array_equal(both, np.concatenate([one, two]))  # bitwise


def test_forward_rejects_bad_input(tiny_model, rng):
    with pytest.raises(ShapeError):
        forward(tiny_model, Tensor(rng.random((1, 4, 16, 16), dtype=np.float32), "f32"))
    with pytest.raises(ShapeError):
        forward(tiny_model, Tensor(rng.random((1, 3, 8, 8), dtype=np.float32), "f32"))


def test_forward_matches_shift_oracle(tiny_config, rng):
    """End-to-end float forward against the independent reference network."""
    model = make_model(tiny_config, seed=11)
    weights = {}
    for d in model.layers:
        weights[d.name + ".weight"] = model.weights[d.name + ".weight"].data
        weights[d.name + ".bias"] = model.biases[d.name + ".bias"]
    x = rng.random((1, 3, 16, 16), dtype=np.float32)
    got = forward(model, Tensor(x, "f32")).data
    ref = oracles.unet_forward_oracle(model.config.to_json(), weights, x)
    assert np.abs(got - ref).max() < 1e-5


def test_forward_nn_upsample_mode(rng):
    cfg = UNetConfig(blocks=2, base_channels=4, input_size=(16, 16),
                     upsample_mode=NN_UPSAMPLE_CONV)
    model = make_model(cfg, seed=5)
    weights = {d.name + s: (model.weights[d.name + ".weight"].data if s == ".weight"
                            else model.biases[d.name + ".bias"])
               for d in model.layers for s in (".weight", ".bias")}
    x = rng.random((1, 3, 16, 16), dtype=np.float32)
    got = forward(model, Tensor(x, "f32")).data
    ref = oracles.unet_forward_oracle(cfg.to_json(), weights, x)
    assert np.abs(got - ref).max() < 1e-5


def test_mac_instrumentation_matches_static_counts(tiny_config, rng):
    model = make_model(tiny_config, seed=2)
    counter = MacCounter()
    forward(model, Tensor(rng.random((1, 3, 16, 16), dtype=np.float32), "f32"),
            mac_counter=counter)
    for d in model.layers:
        assert counter.per_layer[d.name] == d.macs, d.name


def test_save_load_round_trip(tmp_path, tiny_model, rng):
    from unetlite.model import load_model, save_model
    save_model(tiny_model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.config == tiny_model.config
    x = Tensor(rng.random((1, 3, 16, 16), dtype=np.float32), "f32")
    assert np.array_equal(forward(back, x).data, forward(tiny_model, x).data)
