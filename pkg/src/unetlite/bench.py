"""Latency/throughput/memory/energy benchmark harness.

Timing uses the monotonic high-resolution clock.  The cold (first) run is
measured on a fresh model instance before any warmup and reported
separately; warm statistics never include it.  Power is a user-supplied
input: energy per image is computed exactly as power/fps, the same
arithmetic the published deployment tables use.

Memory is a model-based estimate (weights + peak concurrently-live
activations + input batch), not an OS resident-set probe; runtime stacks
and library overhead are deliberately excluded.
"""

from __future__ import annotations

import copy
import io
import time
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .model import UNetModel, forward
from .quant import quantized_size
from .tensor import Tensor

REL_TOL = 1e-9


@dataclass
class BenchReport:
    batch_size: int
    cold_ms: float
    mean_ms: float
    std_ms: float
    p95_ms: float
    max_ms: float
    fps: float
    power_w: float | None
    energy_mj: float | None
    mem_bytes: int

    def validate(self):
        """Arithmetic self-consistency; called on every emission."""
        if self.fps <= 0 or self.mean_ms <= 0:
            raise UsageError("degenerate benchmark report")
        if abs(self.fps * self.mean_ms / 1000.0 - self.batch_size) \
                > REL_TOL * self.batch_size:
            raise UsageError("fps * mean latency != batch size")
        if self.power_w is not None:
            want = 1000.0 * self.power_w / self.fps
            if self.energy_mj is None or abs(self.energy_mj - want) > REL_TOL * max(want, 1.0):
                raise UsageError("energy column inconsistent with power/fps")
        if self.max_ms < self.p95_ms or self.p95_ms < 0:
            raise UsageError("latency ordering violated (max < p95)")

    def csv_row(self) -> str:
        self.validate()
        power = f"{self.power_w:.6g}" if self.power_w is not None else ""
        energy = f"{self.energy_mj:.6g}" if self.energy_mj is not None else ""
        return (f"{self.batch_size},{self.cold_ms:.6g},{self.mean_ms:.6g},"
                f"{self.std_ms:.6g},{self.p95_ms:.6g},{self.max_ms:.6g},"
                f"{self.fps:.6g},{power},{energy},{self.mem_bytes}")


CSV_HEADER = "batch,cold_ms,mean_ms,std_ms,p95_ms,max_ms,fps,power_w,energy_mj,mem_bytes"


def energy_per_image(power_w: float, fps: float) -> float:
    """Millijoules per image from average power and throughput."""
    if fps <= 0:
        raise UsageError(f"fps must be positive, got {fps}")
    if power_w < 0:
        raise UsageError("power must be non-negative")
    return 1000.0 * power_w / fps


def memory_estimate(model: UNetModel, batch: int = 1) -> int:
    """Weights + batch x peak live activations + batch x input bytes."""
    cfg = model.config
    h, w = cfg.input_size
    weight_bytes = quantized_size(model)
    act_elem = 1 if model.mode == "int" else 4
    input_bytes = cfg.in_channels * h * w * 4  # f32 ingress

    # liveness walk over the execution order; tensors are freed when their
    # last consumer has run, skip tensors stay live until the decoder concat
    steps, consumers = _execution_plan(cfg)
    live: dict[str, int] = {}
    refs = dict(consumers)
    peak = 0
    for out_name, out_elems, inputs in steps:
        live[out_name] = out_elems * act_elem
        peak = max(peak, sum(live.values()))
        for name in inputs:
            if name == "input":
                continue  # charged by the separate input term
            refs[name] -= 1
            if refs[name] == 0:
                del live[name]
    return weight_bytes + batch * peak + batch * input_bytes


def _execution_plan(cfg) -> tuple[list, dict]:
    """(steps, consumer counts): step = (output name, elements, input names)."""
    h, w = cfg.input_size
    steps = []
    consumers: dict[str, int] = {}

    def emit(out, c, hh, ww, inputs):
        steps.append((out, c * hh * ww, inputs))
        consumers[out] = 0
        for name in inputs:
            if name != "input":
                consumers[name] += 1

    cur = "input"
    c_in = cfg.in_channels
    skips = []
    for b in range(cfg.blocks):
        c = cfg.width(b)
        emit(f"enc{b}.conv0", c, h, w, [cur])
        emit(f"enc{b}.conv1", c, h, w, [f"enc{b}.conv0"])
        skips.append((f"enc{b}.conv1", c))
        h, w = h // 2, w // 2
        emit(f"enc{b}.pool", c, h, w, [f"enc{b}.conv1"])
        cur, c_in = f"enc{b}.pool", c
    m = cfg.width(cfg.blocks)
    emit("mid.conv0", m, h, w, [cur])
    emit("mid.conv1", m, h, w, ["mid.conv0"])
    cur = "mid.conv1"
    for b in reversed(range(cfg.blocks)):
        c = cfg.width(b)
        h, w = h * 2, w * 2
        emit(f"dec{b}.up", c, h, w, [cur])
        skip_name, skip_c = skips[b]
        emit(f"dec{b}.concat", c + skip_c, h, w, [f"dec{b}.up", skip_name])
        emit(f"dec{b}.conv0", c, h, w, [f"dec{b}.concat"])
        emit(f"dec{b}.conv1", c, h, w, [f"dec{b}.conv0"])
        cur = f"dec{b}.conv1"
    emit("final.conv", cfg.out_channels, h, w, [cur])
    # the network output is consumed by the caller
    consumers["final.conv"] += 1
    return steps, consumers


def run(model: UNetModel, batch_size: int = 1, warmup: int = 5, iters: int = 50,
        power_w: float | None = None, seed: int = 0) -> BenchReport:
    """Benchmark forwards on fixed-seed random input.

    The cold latency is the very first forward of a fresh model instance,
    taken before any warmup; warm statistics cover only the ``iters`` runs
    after ``warmup`` untimed ones.
    """
    if iters < 1:
        raise UsageError(f"iters must be >= 1, got {iters}")
    if warmup < 0:
        raise UsageError("warmup must be >= 0")
    if batch_size < 1:
        raise UsageError("batch size must be >= 1")
    cfg = model.config
    h, w = cfg.input_size
    rng = np.random.default_rng(seed)
    x = Tensor(rng.random((batch_size, cfg.in_channels, h, w), dtype=np.float32), "f32")

    fresh = copy.deepcopy(model)
    t0 = time.perf_counter()
    forward(fresh, x)
    cold_ms = (time.perf_counter() - t0) * 1000.0

    for _ in range(warmup):
        forward(fresh, x)
    lat = np.empty(iters)
    for i in range(iters):
        t0 = time.perf_counter()
        forward(fresh, x)
        lat[i] = (time.perf_counter() - t0) * 1000.0

    mean_ms = float(lat.mean())
    fps = batch_size / (mean_ms / 1000.0)
    report = BenchReport(
        batch_size=batch_size,
        cold_ms=cold_ms,
        mean_ms=mean_ms,
        std_ms=float(lat.std()),
        p95_ms=float(np.percentile(lat, 95)),
        max_ms=float(lat.max()),
        fps=fps,
        power_w=power_w,
        energy_mj=energy_per_image(power_w, fps) if power_w is not None else None,
        mem_bytes=memory_estimate(model, batch_size),
    )
    report.validate()
    return report


def batch_sweep(model: UNetModel, batches, warmup: int = 5, iters: int = 50,
                power_w: float | None = None, seed: int = 0) -> list[BenchReport]:
    return [run(model, b, warmup, iters, power_w, seed) for b in batches]


def sweep_csv(reports: list[BenchReport]) -> str:
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for r in reports:
        out.write(r.csv_row() + "\n")
    return out.getvalue()
