"""Dataflow accelerator estimator: folding, initiation interval, throughput.

Each weighted layer becomes one pipeline node processing
ceil(MACs / (pe * simd)) cycles per input, with pe dividing the output
channels and simd dividing in_channels * Kh * Kw.  In steady state a
pipelined dataflow accelerator accepts a new input every initiation
interval II = max node cycles, so throughput is clock / II and per-input
latency is reported as II / clock.  Resource usage (LUT/BRAM/DSP) is out
of scope.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import ConfigError, DataError, InfeasibleError
from .model import LayerDef, UNetConfig, layer_defs

DEFAULT_CLOCK_HZ = 100_000_000


@dataclass(frozen=True)
class Folding:
    pe: int
    simd: int


@dataclass
class FoldingConfig:
    clock_hz: float
    layers: dict[str, Folding]

    def to_json(self) -> dict:
        obj = {"clock_hz": self.clock_hz}
        for name, f in self.layers.items():
            obj[name] = {"pe": f.pe, "simd": f.simd}
        return obj

    @staticmethod
    def from_json(obj: dict) -> "FoldingConfig":
        clock = float(obj.get("clock_hz", DEFAULT_CLOCK_HZ))
        layers = {}
        for name, v in obj.items():
            if name == "clock_hz":
                continue
            try:
                layers[name] = Folding(pe=int(v["pe"]), simd=int(v["simd"]))
            except (TypeError, KeyError) as e:
                raise DataError(f"bad folding entry for {name!r}: {e}") from e
        return FoldingConfig(clock_hz=clock, layers=layers)


def load_folding(path: str | Path) -> FoldingConfig:
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as e:
        raise DataError(f"cannot read folding file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e
    return FoldingConfig.from_json(obj)


def save_folding(folding: FoldingConfig, path: str | Path):
    Path(path).write_text(json.dumps(folding.to_json(), indent=2) + "\n")


@dataclass
class DataflowReport:
    clock_hz: float
    node_cycles: dict[str, int]

    @property
    def initiation_interval(self) -> int:
        return max(self.node_cycles.values())

    @property
    def latency_s(self) -> float:
        return self.initiation_interval / self.clock_hz

    @property
    def fps(self) -> float:
        return self.clock_hz / self.initiation_interval

    @property
    def bottleneck(self) -> str:
        ii = self.initiation_interval
        for name, c in self.node_cycles.items():
            if c == ii:
                return name
        raise AssertionError("unreachable")

    def energy_mj(self, power_w: float) -> float:
        return 1000.0 * power_w / self.fps

    def fps_exact(self) -> Fraction:
        return Fraction(int(self.clock_hz)) / self.initiation_interval

    def csv(self, power_w: float | None = None) -> str:
        out = io.StringIO()
        out.write("node,cycles\n")
        for name, c in self.node_cycles.items():
            out.write(f"{name},{c}\n")
        summary = (f"# ii_cycles={self.initiation_interval}"
                   f" clock_hz={self.clock_hz:.6g}"
                   f" latency_s={self.latency_s:.9g}"
                   f" fps={self.fps:.6f}"
                   f" bottleneck={self.bottleneck}")
        if power_w is not None:
            summary += f" energy_mj={self.energy_mj(power_w):.6f}"
        out.write(summary + "\n")
        return out.getvalue()


def _fold_dims(layer: LayerDef) -> tuple[int, int]:
    kh, kw = layer.kernel
    return layer.out_channels, layer.in_channels * kh * kw


def node_cycles(layer: LayerDef, pe: int, simd: int) -> int:
    """Cycles one node needs per input: ceil(MACs / (pe * simd))."""
    pe_dim, simd_dim = _fold_dims(layer)
    if pe < 1 or pe_dim % pe:
        raise ConfigError(f"{layer.name}: pe={pe} does not divide {pe_dim} output channels")
    if simd < 1 or simd_dim % simd:
        raise ConfigError(f"{layer.name}: simd={simd} does not divide "
                          f"in_channels*Kh*Kw = {simd_dim}")
    return -(-layer.macs // (pe * simd))


def estimate(config: UNetConfig, folding: FoldingConfig) -> DataflowReport:
    """Per-node cycles and initiation interval under a folding config."""
    cycles = {}
    for d in layer_defs(config):
        if d.name not in folding.layers:
            raise ConfigError(f"folding config missing layer {d.name!r}")
        f = folding.layers[d.name]
        cycles[d.name] = node_cycles(d, f.pe, f.simd)
    return DataflowReport(clock_hz=folding.clock_hz, node_cycles=cycles)


def _divisors(n: int) -> list[int]:
    out = [d for d in range(1, int(n ** 0.5) + 1) if n % d == 0]
    return sorted(set(out + [n // d for d in out]))


def _min_fold(layer: LayerDef, max_cycles: int) -> Folding:
    """Smallest pe*simd meeting the cycle budget; ties broken by lowest pe."""
    pe_dim, simd_dim = _fold_dims(layer)
    need = -(-layer.macs // max_cycles)  # pe*simd >= ceil(macs / budget)
    best: tuple[int, int, Folding] | None = None
    simd_divs = _divisors(simd_dim)
    for pe in _divisors(pe_dim):
        want = -(-need // pe)
        simd = next((s for s in simd_divs if s >= want), None)
        if simd is None:
            continue
        key = (pe * simd, pe)
        if best is None or key < best[:2]:
            best = (pe * simd, pe, Folding(pe, simd))
    if best is None:
        raise InfeasibleError(
            f"layer {layer.name!r} cannot reach {max_cycles} cycles even fully "
            f"parallel (needs {layer.macs} MACs, min {-(-layer.macs // (pe_dim * simd_dim))} "
            f"cycles)", bottleneck=layer.name)
    return best[2]


def target_latency_fold(config: UNetConfig, clock_hz: float,
                        target_latency_s: float) -> FoldingConfig:
    """Minimal-parallelism folding whose II meets the latency target.

    Total parallelism sum(pe*simd) is minimized layer by layer (layers are
    independent given a shared cycle budget).  Infeasible targets raise,
    naming the most expensive offending layer.
    """
    if target_latency_s <= 0 or clock_hz <= 0:
        raise ConfigError("target latency and clock must be positive")
    budget = int(target_latency_s * clock_hz)
    if budget < 1:
        worst = max(layer_defs(config), key=lambda d: d.macs)
        raise InfeasibleError(
            f"target {target_latency_s}s is under one clock cycle; bottleneck "
            f"layer {worst.name!r}", bottleneck=worst.name)
    layers: dict[str, Folding] = {}
    infeasible: list[LayerDef] = []
    for d in layer_defs(config):
        try:
            layers[d.name] = _min_fold(d, budget)
        except InfeasibleError:
            infeasible.append(d)
    if infeasible:
        worst = max(infeasible, key=lambda d: d.macs)
        raise InfeasibleError(
            f"{len(infeasible)} layer(s) cannot meet {target_latency_s}s at "
            f"{clock_hz:.6g} Hz; bottleneck is {worst.name!r} with {worst.macs} MACs",
            bottleneck=worst.name)
    return FoldingConfig(clock_hz=clock_hz, layers=layers)


def all_ones_folding(config: UNetConfig, clock_hz: float = DEFAULT_CLOCK_HZ) -> FoldingConfig:
    return FoldingConfig(clock_hz=clock_hz,
                         layers={d.name: Folding(1, 1) for d in layer_defs(config)})
