"""Operator-facing command line.

Subcommands: analyze, infer, quantize, eval, bench, estimate.
Exit codes are a stable contract: 0 success, 1 usage, 2 data/IO,
3 config/shape.  All CSV output is newline-terminated and locale
independent.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analyzer, bench, dataflow, metrics, quant, store, tiling
from .errors import (ConfigError, DataError, UnetliteError, UsageError)
from .model import CONFIG_FILE, UNetConfig, load_model, save_model
from .tensor import Tensor

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CONFIG = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _write_or_print(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_config(model_dir: str) -> UNetConfig:
    path = Path(model_dir) / CONFIG_FILE
    if not path.is_file():
        raise DataError(f"missing architecture config {path}")
    try:
        return UNetConfig.from_json(json.loads(path.read_text()))
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e


def cmd_analyze(args) -> int:
    if args.sweep:
        rows = analyzer.sweep()
        _write_or_print(analyzer.sweep_csv(rows), args.out)
        return 0
    cfg = UNetConfig(blocks=args.blocks, base_channels=args.base,
                     in_channels=args.in_channels, out_channels=args.out_channels,
                     input_size=(args.size, args.size))
    rep = analyzer.analyze(cfg)
    if args.out:
        Path(args.out).write_text(analyzer.report_csv(rep))
    shares = analyzer.path_breakdown(cfg)
    print(f"blocks={cfg.blocks} base_channels={cfg.base_channels} "
          f"input={cfg.input_size[0]}x{cfg.input_size[1]}")
    print(f"total params: {rep.total_params:,}")
    print(f"total MACs:   {rep.total_macs:,}")
    print(f"param shares: encoder {shares['params']['encoder']:.1%}, "
          f"middle {shares['params']['middle']:.1%}, "
          f"decoder {shares['params']['decoder']:.1%}")
    print(f"MAC shares:   encoder {shares['macs']['encoder']:.1%}, "
          f"middle {shares['macs']['middle']:.1%}, "
          f"decoder {shares['macs']['decoder']:.1%}")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    if args.quantized and model.mode == "float":
        raise ConfigError(f"--quantized given but {args.model} holds a float model")
    image = store.read_ppm(args.image)
    h, w = image.shape[2], image.shape[3]
    grid = tiling.plan(h, w, args.tile, args.stride)
    prob = tiling.infer_tiles(model, image, grid, workers=args.workers)
    mask = (prob >= args.threshold).astype(np.uint8)
    store.write_pgm(args.out, mask)
    if args.prob_out:
        s = store.WeightStore()
        s.put("prob", prob, "f32")
        store.write_store(s, args.prob_out)
    print(f"wrote {args.out} ({w}x{h}, {len(grid)} tiles, "
          f"positive {mask.mean():.2%})")
    return 0


def _calib_batches(calib_dir: str, config: UNetConfig) -> list[Tensor]:
    files = sorted(Path(calib_dir).glob("*.ppm"))
    if not files:
        raise DataError(f"no .ppm calibration tiles in {calib_dir}")
    batches = []
    for f in files:
        img = store.read_ppm(f)
        if (img.shape[2], img.shape[3]) != config.input_size:
            raise DataError(f"{f}: calibration tile is {img.shape[2]}x{img.shape[3]}, "
                            f"model wants {config.input_size}")
        batches.append(Tensor(img, "f32"))
    return batches


def cmd_quantize(args) -> int:
    model = load_model(args.model)
    if model.mode != "float":
        raise ConfigError(f"{args.model} is already quantized")
    scheme = quant.QuantScheme(
        weight_bits=args.bits_w, act_bits=args.bits_a,
        skip_first_layer=not args.no_skip_first,
        calibration_mode=args.calibration, percentile=args.percentile)
    batches = _calib_batches(args.calib, model.config)
    stats = quant.calibrate(model, batches, scheme)
    qmodel = quant.quantize_model(model, stats, scheme)
    save_model(qmodel, args.out)
    size_f = quant.quantized_size(model)
    size_q = quant.quantized_size(qmodel)
    print(f"quantized W{args.bits_w}A{args.bits_a} "
          f"(skip_first={not args.no_skip_first}, mode={qmodel.mode}) -> {args.out}")
    print(f"weight bytes: {size_f:,} -> {size_q:,}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    index = store.index_dataset(args.data, limit=args.limit)
    if not len(index):
        raise DataError(f"no image/mask pairs under {args.data}")
    conf = metrics.Confusion()
    for img_path, gt_path in index.pairs:
        image = store.read_ppm(img_path)
        gt = store.read_mask(gt_path)
        grid = tiling.plan(image.shape[2], image.shape[3], args.tile, args.stride)
        pred = tiling.segment_image(model, image, grid, threshold=args.threshold,
                                    workers=args.workers)
        conf = metrics.update(conf, pred, gt)
    csv = metrics.eval_csv(len(index), conf)
    _write_or_print(csv, args.out)
    print(f"images={len(index)} iou={metrics.iou(conf):.4f} "
          f"accuracy={metrics.accuracy(conf):.4f}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    model = load_model(args.model)
    batches = [int(b) for b in args.batch.split(",") if b]
    if not batches:
        raise UsageError("no batch sizes given")
    reports = bench.batch_sweep(model, batches, warmup=args.warmup,
                                iters=args.iters, power_w=args.power, seed=args.seed)
    _write_or_print(bench.sweep_csv(reports), args.out)
    for r in reports:
        line = (f"batch={r.batch_size} cold={r.cold_ms:.1f}ms "
                f"warm={r.mean_ms:.1f}ms fps={r.fps:.1f}")
        if r.energy_mj is not None:
            line += f" energy={r.energy_mj:.1f}mJ"
        print(line, file=sys.stderr)
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_config(args.model)
    clock_hz = (args.clock_mhz if args.clock_mhz is not None else 100.0) * 1e6
    if args.folding:
        folding = dataflow.load_folding(args.folding)
        if args.clock_mhz is not None:
            folding.clock_hz = clock_hz
    elif args.target_ms is not None:
        folding = dataflow.target_latency_fold(cfg, clock_hz, args.target_ms / 1000.0)
        if args.save_folding:
            dataflow.save_folding(folding, args.save_folding)
    else:
        raise UsageError("estimate needs --folding FILE or --target-ms X")
    rep = dataflow.estimate(cfg, folding)
    _write_or_print(rep.csv(power_w=args.power), args.out)
    print(f"II={rep.initiation_interval} cycles at {folding.clock_hz / 1e6:.6g} MHz: "
          f"latency {rep.latency_s * 1000:.4f} ms, {rep.fps:.2f} fps", file=sys.stderr)
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="unetlite",
                description="Lightweight U-Net inference, quantization and "
                            "deployment analysis")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="static parameter/MAC cost model")
    a.add_argument("--blocks", type=int, default=4)
    a.add_argument("--base", type=int, default=16)
    a.add_argument("--in-channels", type=int, default=3)
    a.add_argument("--out-channels", type=int, default=1)
    a.add_argument("--size", type=int, default=256)
    a.add_argument("--sweep", action="store_true",
                   help="emit the blocks x channel-scale cost table")
    a.add_argument("--out", help="write CSV here")
    a.set_defaults(func=cmd_analyze)

    i = sub.add_parser("infer", help="tiled inference over a PPM raster")
    i.add_argument("--model", required=True, help="model directory")
    i.add_argument("--image", required=True, help="input P6 .ppm")
    i.add_argument("--out", required=True, help="output P5 mask")
    i.add_argument("--tile", type=int, default=256)
    i.add_argument("--stride", type=int, default=224)
    i.add_argument("--threshold", type=float, default=0.5)
    i.add_argument("--quantized", action="store_true",
                   help="require the model directory to hold a quantized model")
    i.add_argument("--workers", type=int, default=None)
    i.add_argument("--prob-out", help="also write the stitched probability "
                                      "raster as a UNW1 container")
    i.set_defaults(func=cmd_infer)

    q = sub.add_parser("quantize", help="post-training quantization")
    q.add_argument("--model", required=True)
    q.add_argument("--calib", required=True, help="directory of .ppm tiles")
    q.add_argument("--bits-w", type=int, default=8)
    q.add_argument("--bits-a", type=int, default=8)
    q.add_argument("--no-skip-first", action="store_true",
                   help="also quantize the first convolution")
    q.add_argument("--calibration", choices=("minmax", "percentile"), default="minmax")
    q.add_argument("--percentile", type=float, default=0.999)
    q.add_argument("--out", required=True, help="output model directory")
    q.set_defaults(func=cmd_quantize)

    e = sub.add_parser("eval", help="IoU/accuracy over an images/ + gt/ dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--tile", type=int, default=256)
    e.add_argument("--stride", type=int, default=224)
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--out", help="write CSV here")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="latency/throughput/energy benchmark")
    b.add_argument("--model", required=True)
    b.add_argument("--batch", default="1,8,16,32", help="comma-separated batch sizes")
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--iters", type=int, default=50)
    b.add_argument("--power", type=float, default=None,
                   help="average board power in watts (for the energy column)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="write CSV here")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("estimate", help="dataflow accelerator II estimate")
    s.add_argument("--model", required=True)
    s.add_argument("--clock-mhz", type=float, default=None,
                   help="clock in MHz (default 100, or the folding file's)")
    s.add_argument("--folding", help="JSON folding config")
    s.add_argument("--target-ms", type=float, default=None,
                   help="derive a minimal folding for this latency")
    s.add_argument("--save-folding", help="write the derived folding here")
    s.add_argument("--power", type=float, default=None)
    s.add_argument("--out", help="write CSV here")
    s.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except UnetliteError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
