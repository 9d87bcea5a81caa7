import json
from fractions import Fraction

import numpy as np
import pytest

from unetlite.dataflow import (DataflowReport, Folding, FoldingConfig,
                               all_ones_folding, estimate, load_folding,
                               node_cycles, save_folding, target_latency_fold)
from unetlite.errors import ConfigError, InfeasibleError
from unetlite.model import UNetConfig, layer_defs

DEFAULT = UNetConfig()


def test_node_cycles_no_parallelism():
    for d in layer_defs(DEFAULT):
        assert node_cycles(d, 1, 1) == d.macs


def test_node_cycles_full_parallelism():
    d = layer_defs(DEFAULT)[0]  # enc0.conv0: 3->16, 3x3
    kh, kw = d.kernel
    full = node_cycles(d, d.out_channels, d.in_channels * kh * kw)
    assert full == d.out_hw[0] * d.out_hw[1]


def test_node_cycles_ceiling_property(rng):
    defs = layer_defs(DEFAULT)
    for _ in range(50):
        d = defs[int(rng.integers(len(defs)))]
        kh, kw = d.kernel
        pe_divs = [p for p in range(1, d.out_channels + 1) if d.out_channels % p == 0]
        sd = d.in_channels * kh * kw
        simd_divs = [s for s in range(1, sd + 1) if sd % s == 0]
        pe = int(rng.choice(pe_divs))
        simd = int(rng.choice(simd_divs))
        c = node_cycles(d, pe, simd)
        assert c * pe * simd >= d.macs > (c - 1) * pe * simd


def test_node_cycles_divisibility_errors():
    d = layer_defs(DEFAULT)[0]
    with pytest.raises(ConfigError):
        node_cycles(d, 5, 1)  # 5 does not divide 16
    with pytest.raises(ConfigError):
        node_cycles(d, 1, 5)  # 5 does not divide 27


def test_estimate_all_ones_ii_is_max_macs():
    rep = estimate(DEFAULT, all_ones_folding(DEFAULT))
    assert rep.initiation_interval == max(d.macs for d in layer_defs(DEFAULT))


def test_estimate_missing_layer():
    folding = all_ones_folding(DEFAULT)
    del folding.layers["mid.conv0"]
    with pytest.raises(ConfigError, match="mid.conv0"):
        estimate(DEFAULT, folding)


def test_published_ii_anchor():
    """786,432 cycles at 100 MHz: 7.864 ms latency, 127.2 fps."""
    rep = DataflowReport(clock_hz=100e6, node_cycles={"node": 786_432})
    assert rep.latency_s * 1000 == pytest.approx(7.864, abs=0.001)
    assert rep.fps == pytest.approx(127.2, abs=0.1)
    assert rep.fps_exact() * 786_432 == Fraction(100_000_000)
    assert rep.fps * rep.latency_s == pytest.approx(1.0, rel=1e-12)


def test_single_node_trivial():
    rep = DataflowReport(clock_hz=100e6, node_cycles={"n": 100})
    assert rep.latency_s == pytest.approx(1e-6)
    assert rep.fps == pytest.approx(1e6)


def test_increasing_pe_never_increases_ii(rng):
    cfg = UNetConfig(blocks=2, base_channels=4, input_size=(32, 32))
    folding = all_ones_folding(cfg)
    rep = estimate(cfg, folding)
    for d in layer_defs(cfg):
        for pe in (2, d.out_channels):
            if d.out_channels % pe:
                continue
            f2 = FoldingConfig(folding.clock_hz, dict(folding.layers))
            f2.layers[d.name] = Folding(pe, 1)
            assert estimate(cfg, f2).initiation_interval <= rep.initiation_interval


def test_target_latency_trivial_budget():
    cfg = UNetConfig(blocks=1, base_channels=2, input_size=(16, 16))
    max_macs = max(d.macs for d in layer_defs(cfg))
    folding = target_latency_fold(cfg, 100e6, max_macs / 100e6)
    assert all(f.pe == 1 and f.simd == 1 for f in folding.layers.values())


def test_target_latency_round_trip():
    target_s = 7.87e-3
    folding = target_latency_fold(DEFAULT, 100e6, target_s)
    rep = estimate(DEFAULT, folding)
    assert rep.initiation_interval <= 787_000
    assert rep.latency_s <= target_s


def test_target_latency_minimality():
    cfg = UNetConfig(blocks=1, base_channels=2, input_size=(16, 16))
    budget_s = 2e-3  # 200k cycles at 100 MHz
    folding = target_latency_fold(cfg, 100e6, budget_s)
    for d in layer_defs(cfg):
        f = folding.layers[d.name]
        assert node_cycles(d, f.pe, f.simd) * 1e-8 <= budget_s
        # dropping to the next smaller legal product must violate the target
        if f.pe * f.simd > 1:
            kh, kw = d.kernel
            sd = d.in_channels * kh * kw
            smaller = [
                (p, s)
                for p in range(1, d.out_channels + 1) if d.out_channels % p == 0
                for s in range(1, sd + 1) if sd % s == 0
                and p * s < f.pe * f.simd
            ]
            assert all(node_cycles(d, p, s) * 1e-8 > budget_s for p, s in smaller)


def test_target_latency_infeasible_names_bottleneck():
    with pytest.raises(InfeasibleError) as exc:
        target_latency_fold(DEFAULT, 100e6, 1e-9)
    worst = max(layer_defs(DEFAULT), key=lambda d: d.macs)
    assert exc.value.bottleneck == worst.name
    assert worst.name in str(exc.value)


def test_folding_json_round_trip(tmp_path):
    folding = all_ones_folding(DEFAULT, clock_hz=150e6)
    path = tmp_path / "fold.json"
    save_folding(folding, path)
    obj = json.loads(path.read_text())
    assert obj["clock_hz"] == 150e6
    assert obj["enc0.conv0"] == {"pe": 1, "simd": 1}
    back = load_folding(path)
    assert back.clock_hz == folding.clock_hz
    assert back.layers == folding.layers


def test_report_csv_has_summary():
    rep = estimate(DEFAULT, all_ones_folding(DEFAULT))
    csv = rep.csv(power_w=5.46)
    lines = csv.splitlines()
    assert lines[0] == "node,cycles"
    assert len(lines) == 1 + 23 + 1
    assert lines[-1].startswith("# ii_cycles=")
    assert "energy_mj=" in lines[-1]
    assert csv.endswith("\n")
