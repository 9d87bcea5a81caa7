"""Static cost model: parameters, MACs, path breakdown, architecture sweep.

Counting conventions (pinned, they reproduce the published anchor totals):
one MAC = one multiply-accumulate pair; bias adds are not counted;
transposed convolutions are counted output-centric, i.e.
in*out*Kh*Kw*Hout*Wout including kernel positions that land on implicit
zeros; pooling, upsampling and activations contribute zero MACs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

from .errors import UsageError
from .model import LayerDef, UNetConfig, layer_defs

PATHS = ("enc", "mid", "dec", "final")


@dataclass(frozen=True)
class CostRow:
    name: str
    path: str
    params: int
    macs: int
    out_shape: tuple[int, int, int]  # (C, H, W)


@dataclass
class CostReport:
    config: UNetConfig
    rows: list[CostRow]

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    def path_totals(self, metric: str) -> dict[str, int]:
        totals = {p: 0 for p in PATHS}
        for r in self.rows:
            totals[r.path] += getattr(r, metric)
        return totals

    def shares(self, metric: str) -> dict[str, float]:
        """Fractional split into encoder / middle / decoder(+final)."""
        t = self.path_totals(metric)
        total = sum(t.values())
        return {
            "encoder": t["enc"] / total,
            "middle": t["mid"] / total,
            "decoder": (t["dec"] + t["final"]) / total,
        }


def _row(d: LayerDef) -> CostRow:
    return CostRow(name=d.name, path=d.path, params=d.n_params, macs=d.macs,
                   out_shape=(d.out_channels, *d.out_hw))


def analyze(config: UNetConfig) -> CostReport:
    """Full per-layer cost report for one configuration."""
    return CostReport(config=config, rows=[_row(d) for d in layer_defs(config)])


def count_params(config: UNetConfig) -> int:
    return analyze(config).total_params


def count_macs(config: UNetConfig) -> int:
    return analyze(config).total_macs


def path_breakdown(config: UNetConfig) -> dict[str, dict[str, float]]:
    rep = analyze(config)
    return {"params": rep.shares("params"), "macs": rep.shares("macs")}


def sweep(blocks_range=range(1, 5), base_channels=(2, 4, 8, 16, 32),
          in_channels: int = 3, out_channels: int = 1,
          input_size: tuple[int, int] = (256, 256)) -> list[dict]:
    """Cost table over the block-count x channel-scale grid.

    The default scales are 1/32 .. 1/2 of the original 64-channel stem.
    """
    rows = []
    for blocks in blocks_range:
        for base in base_channels:
            cfg = UNetConfig(blocks=blocks, base_channels=base,
                             in_channels=in_channels, out_channels=out_channels,
                             input_size=input_size)
            rows.append({
                "config": f"b{blocks}c{base}",
                "blocks": blocks,
                "base_channels": base,
                "params": count_params(cfg),
                "macs": count_macs(cfg),
            })
    return rows


def sweep_csv(rows: list[dict]) -> str:
    if not rows:
        raise UsageError("empty sweep")
    out = io.StringIO()
    out.write("config,blocks,base_channels,params,macs\n")
    for r in rows:
        out.write(f"{r['config']},{r['blocks']},{r['base_channels']},"
                  f"{r['params']},{r['macs']}\n")
    return out.getvalue()


def report_csv(report: CostReport) -> str:
    out = io.StringIO()
    out.write("layer,path,params,macs,out_c,out_h,out_w\n")
    for r in report.rows:
        c, h, w = r.out_shape
        out.write(f"{r.name},{r.path},{r.params},{r.macs},{c},{h},{w}\n")
    out.write(f"total,,{report.total_params},{report.total_macs},,,\n")
    return out.getvalue()
