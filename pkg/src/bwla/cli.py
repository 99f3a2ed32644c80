"""Command-line interface.

Subcommands: quantize, infer, bench, inspect, demo. Exit codes: 0 success,
1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import io
from .kernel import bench_gemv, bench_rows_to_csv, full_inference, memory_report
from .numerics import NumericsError
from .pipeline import BwlaConfig, run_bwla, trajectory_csv
from .synth import SynthSpec, gen


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_shape(text: str) -> tuple[int, int]:
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError as exc:
        raise NumericsError(f"bad shape {text!r}, expected NxM") from exc


def _load_input(args) -> np.ndarray:
    if args.matrix:
        arr = io.load_tensor(args.matrix)
        if arr.ndim != 2:
            raise NumericsError("quantize expects a rank-2 tensor")
        return arr
    kind, _, shape = args.synth.partition(":")
    n, m = _parse_shape(shape)
    aliases = {"gaussian": "gaussian_rows", "planted": "planted_bimodal"}
    spec = SynthSpec(kind=aliases.get(kind, kind), rows=n, cols=m, seed=args.seed)
    out = gen(spec)
    return out if isinstance(out, np.ndarray) else out.W


def _config_from_args(args) -> BwlaConfig:
    base = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    overrides = {
        "okt_iters": args.okt_iters,
        "psp_iters": args.psp_iters,
        "rank_ratio": args.rank_ratio,
        "lam_reg": args.lam_reg,
        "act_bits": args.act_bits,
        "binarize_axis": args.axis,
        "schedule": args.schedule,
        "init": args.init,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return BwlaConfig.from_dict(base)


def _cmd_quantize(args) -> int:
    w = _load_input(args)
    cfg = _config_from_args(args)
    result = run_bwla(w, cfg)
    io.save_layer(args.out, result.layer, config=cfg.to_dict())
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(result.report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if args.trajectory:
        with open(args.trajectory, "w") as fh:
            fh.write(trajectory_csv(result.trajectory))
    met = result.report["metrics"]
    print(f"quantized {w.shape[0]}x{w.shape[1]} -> {args.out}")
    print(f"  binarization mse raw/transformed: "
          f"{met['binarization_mse_raw']:.3e} / {met['binarization_mse_transformed']:.3e}")
    print(f"  effective bits: {met['effective_bits']:.4f}  "
          f"monotone: {met['monotone_ok']}")
    return 0


def _cmd_infer(args) -> int:
    layer, _ = io.load_layer(args.artifact)
    acts = io.load_tensor(args.activations)
    batch = np.atleast_2d(acts)
    outs = np.stack([
        full_inference(layer, x, act_bits=args.act_bits) for x in batch
    ])
    out = outs[0] if acts.ndim == 1 else outs
    io.save_tensor(args.out, out)
    print(f"wrote {out.shape} outputs to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    shapes = [_parse_shape(s) for s in args.shapes.split(",")]
    rows = bench_gemv(shapes, repetitions=args.reps, seed=args.seed,
                      act_bits=args.act_bits or 6)
    csv = bench_rows_to_csv(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(csv)
    print(csv, end="")
    by_shape: dict[str, dict[str, float]] = {}
    for r in rows:
        by_shape.setdefault(r["shape"], {})[r["variant"]] = r["median_ns"]
    for shape, variants in by_shape.items():
        dense = variants.get("dense_f32")
        for name, t in variants.items():
            if name != "dense_f32" and dense:
                print(f"# {shape}: {name} speedup over dense_f32: {dense / t:.2f}x")
    return 0


def _cmd_inspect(args) -> int:
    layer, config = io.load_layer(args.artifact)
    n, m = layer.shape
    mem = memory_report(layer)
    print(f"artifact: {args.artifact}")
    print(f"  shape: {n}x{m}  axis: {layer.weights.axis}")
    if layer.rotation is not None:
        d = layer.rotation.dims
        print(f"  rotation factors: {d.n1}x{d.n1} and {d.n2}x{d.n2}")
    if layer.residual_left is not None:
        print(f"  residual rank: {layer.residual_left.shape[1]}")
    print(f"  sign payload: {mem['sign_payload_bytes']} bytes "
          f"(dense f32 would be {mem['dense_f32_bytes']})")
    if config:
        print(f"  config: {json.dumps(config, sort_keys=True)}")
    return 0


def _cmd_demo(args) -> int:
    from .demo import run_demo

    return run_demo(fast=not args.full)


def main(argv=None) -> int:
    parser = _Parser(prog="bwla", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    q = sub.add_parser("quantize", help="quantize a matrix into a packed artifact")
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--matrix", help="input tensor file (rank 2)")
    src.add_argument("--synth", help="synthetic input, e.g. gaussian:128x144")
    q.add_argument("--out", required=True, help="artifact output path")
    q.add_argument("--report", help="JSON report path")
    q.add_argument("--trajectory", help="loss trajectory CSV path")
    q.add_argument("--config", help="JSON config file (flags override)")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--okt-iters", type=int, dest="okt_iters")
    q.add_argument("--psp-iters", type=int, dest="psp_iters")
    q.add_argument("--rank-ratio", type=float, dest="rank_ratio")
    q.add_argument("--lam-reg", type=float, dest="lam_reg")
    q.add_argument("--act-bits", type=int, dest="act_bits")
    q.add_argument("--axis", choices=["row", "column"])
    q.add_argument("--schedule", choices=["sequential", "interleaved"])
    q.add_argument("--init", choices=["auto", "identity", "random"])
    q.set_defaults(func=_cmd_quantize)

    i = sub.add_parser("infer", help="run the packed layer on activations")
    i.add_argument("artifact")
    i.add_argument("activations", help="tensor file, rank 1 or rank 2 (batch)")
    i.add_argument("--out", required=True)
    i.add_argument("--act-bits", type=int, dest="act_bits",
                   help="quantize activations to this width (omit for float)")
    i.set_defaults(func=_cmd_infer)

    b = sub.add_parser("bench", help="time dense vs packed GEMV")
    b.add_argument("--shapes", default="4096x4096")
    b.add_argument("--reps", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--act-bits", type=int, dest="act_bits")
    b.add_argument("--out", help="CSV output path")
    b.set_defaults(func=_cmd_bench)

    s = sub.add_parser("inspect", help="summarize an artifact")
    s.add_argument("artifact")
    s.set_defaults(func=_cmd_inspect)

    d = sub.add_parser("demo", help="run the acceptance-scale experiment")
    d.add_argument("--full", action="store_true",
                   help="full trial counts (slower; default is a fast subset)")
    d.set_defaults(func=_cmd_demo)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NumericsError, io.FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
