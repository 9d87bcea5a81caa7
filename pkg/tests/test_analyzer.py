import numpy as np

from unetlite.analyzer import (analyze, count_macs, count_params,
                               path_breakdown, report_csv, sweep, sweep_csv)
from unetlite.model import NN_UPSAMPLE_CONV, UNetConfig

DEFAULT = UNetConfig()


def test_param_anchor_exact():
    # independent closed-form sum, layer by layer (hand-derived)
    def conv_p(i, o, k):
        return i * o * k * k + o

    expect = 0
    c_in = 3
    for b in range(4):
        c = 16 * 2 ** b
        expect += conv_p(c_in, c, 3) + conv_p(c, c, 3)
        c_in = c
    m = 256
    expect += conv_p(128, m, 3) + conv_p(m, m, 3)
    c_in = m
    for b in reversed(range(4)):
        c = 16 * 2 ** b
        expect += conv_p(c_in, c, 2) + conv_p(2 * c, c, 3) + conv_p(c, c, 3)
        c_in = c
    expect += conv_p(16, 1, 1)
    assert expect == 1_941_105
    assert count_params(DEFAULT) == expect


def test_param_anchor_original_width():
    p = count_params(UNetConfig(base_channels=64))
    assert abs(p - 31e6) / 31e6 < 0.01


def test_tiny_config_params():
    assert count_params(UNetConfig(blocks=1, base_channels=2, input_size=(16, 16))) == 467


def test_mac_anchor():
    m = count_macs(DEFAULT)
    assert m == 3_435_134_976
    assert abs(m - 3.4e9) / 3.4e9 < 0.02
    m64 = count_macs(UNetConfig(base_channels=64))
    assert abs(m64 - 55e9) / 55e9 < 0.02


def test_single_conv_macs():
    rep = analyze(DEFAULT)
    final = [r for r in rep.rows if r.name == "final.conv"][0]
    assert final.macs == 16 * 1 * 1 * 256 * 256 == 1_048_576


def test_path_shares_match_published_split():
    shares = path_breakdown(DEFAULT)
    enc_mid_macs = shares["macs"]["encoder"] + shares["macs"]["middle"]
    enc_mid_params = shares["params"]["encoder"] + shares["params"]["middle"]
    assert abs(enc_mid_macs - 0.316) < 0.002
    assert abs(enc_mid_params - 0.607) < 0.002
    assert 0.40 <= shares["params"]["middle"] <= 0.50
    assert shares["macs"]["decoder"] > 0.5


def test_shares_sum_to_one():
    for metric in ("params", "macs"):
        s = path_breakdown(DEFAULT)[metric]
        assert abs(sum(s.values()) - 1.0) < 1e-12


def test_rows_sum_to_totals():
    rep = analyze(DEFAULT)
    assert sum(r.params for r in rep.rows) == rep.total_params
    assert sum(r.macs for r in rep.rows) == rep.total_macs
    # pure function: identical on re-run
    rep2 = analyze(DEFAULT)
    assert rep.rows == rep2.rows


def test_quadratic_channel_scaling():
    for blocks in (4,):
        for c in (4, 8, 16):
            r = count_params(UNetConfig(blocks=blocks, base_channels=2 * c)) \
                / count_params(UNetConfig(blocks=blocks, base_channels=c))
            assert 3.8 < r < 4.0


def test_mac_ratio_base64_over_base16():
    r = count_macs(UNetConfig(base_channels=64)) / count_macs(DEFAULT)
    assert 15.5 < r < 16.1


def test_sweep_shape_and_csv():
    rows = sweep()
    assert len(rows) == 20  # 4 block counts x 5 channel scales
    csv = sweep_csv(rows)
    lines = csv.splitlines()
    assert lines[0] == "config,blocks,base_channels,params,macs"
    assert len(lines) == 21
    assert csv.endswith("\n")
    # spot-check the default row
    row = [l for l in lines if l.startswith("b4c16,")][0]
    assert row.split(",")[3] == "1941105"


def test_upsample_mode_cost_parity():
    # the nn-upsample substitution changes neither parameters nor MACs
    # under the output-centric transposed-conv convention
    alt = UNetConfig(upsample_mode=NN_UPSAMPLE_CONV)
    assert count_params(alt) == count_params(DEFAULT)
    assert count_macs(alt) == count_macs(DEFAULT)


def test_report_csv_layout():
    csv = report_csv(analyze(UNetConfig(blocks=1, base_channels=2, input_size=(16, 16))))
    lines = csv.splitlines()
    assert lines[0].startswith("layer,path,")
    assert lines[-1].startswith("total,,467,")
