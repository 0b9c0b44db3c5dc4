"""Command-line interface.

Exit statuses: 0 success, 2 configuration or input error, 3 evolution run
aborted (partial outputs kept), 4 corrupt artifact.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import metrics as M
from .config import load_config
from .data import DEFAULT_FRACTIONS, generate_synthetic, load_directory, write_dataset
from .errors import ConfigError, CorruptCheckpoint, IngestionError, ShapeError
from .evolution import EvolutionAborted, evaluate_network, load_checkpoint, run_evolution

OK, USAGE, ABORTED, CORRUPT = 0, 2, 3, 4


def _fail(msg, status):
    print(f"evosynth: error: {msg}", file=sys.stderr)
    return status


def _parse_size(text):
    parts = text.lower().split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ValueError(f"size must be N or HxW, got {text!r}")
    return int(parts[0]), int(parts[1])


def cmd_gen_data(args) -> int:
    if args.count < 3:
        return _fail(f"--count must be >= 3 (got {args.count})", USAGE)
    try:
        h, w = _parse_size(args.size)
    except ValueError as exc:
        return _fail(str(exc), USAGE)
    if min(h, w) < 16:
        return _fail(f"--size must be >= 16 in each dimension (got {h}x{w})", USAGE)
    data = generate_synthetic(args.seed, args.count, h, w)
    try:
        write_dataset(data.train + data.validation + data.test, args.out)
    except OSError as exc:
        return _fail(f"cannot write dataset to {args.out}: {exc}", USAGE)
    print(f"wrote {args.count} samples to {args.out}")
    return OK


def cmd_evolve(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc), USAGE)
    if args.out:
        cfg.output_dir = args.out

    def progress(row):
        print(
            f"generation {row['generation']}: {row['num_synapses']} synapses, "
            f"{row['efficiency_x']:.2f}X, F_beta {row['f_beta']:.4f}, MAE {row['mae']:.4f}",
            flush=True,
        )

    try:
        run_evolution(cfg, progress=progress)
    except EvolutionAborted as exc:
        return _fail(f"{exc}; partial lineage in {cfg.output_dir}", ABORTED)
    except (IngestionError, ValueError, OSError) as exc:
        return _fail(str(exc), USAGE)
    print(f"lineage written to {os.path.join(cfg.output_dir, 'lineage.csv')}")
    return OK


def cmd_eval(args) -> int:
    try:
        network, _ = load_checkpoint(args.checkpoint)
    except CorruptCheckpoint as exc:
        return _fail(str(exc), CORRUPT)
    mcfg = None
    try:
        if os.path.isfile(args.data):
            cfg = load_config(args.data)
            data = cfg.data.load()
            mcfg = cfg.metrics
        else:
            data = load_directory(
                os.path.join(args.data, "images"), os.path.join(args.data, "masks"), tuple(args.fractions)
            )
        if args.beta_sq is not None or args.threshold is not None:
            base = mcfg or M.MetricsConfig()
            threshold = args.threshold if args.threshold is not None else base.threshold
            mcfg = M.MetricsConfig(
                beta_sq=args.beta_sq if args.beta_sq is not None else base.beta_sq,
                threshold=threshold if threshold == "sweep" else float(threshold),
            )
        mcfg = mcfg or M.MetricsConfig()
    except (ConfigError, IngestionError, ValueError) as exc:
        return _fail(str(exc), USAGE)
    samples = data.split(args.split)
    if not samples:
        return _fail(f"split {args.split!r} is empty", USAGE)
    img = samples[0].image
    data_shape = (img.shape[2], *img.shape[:2])
    net_shape = tuple(network.architecture.input_shape)
    if data_shape != net_shape:
        return _fail(f"data shape {data_shape} does not match checkpoint input shape {net_shape}", USAGE)
    try:
        report = evaluate_network(network, samples, mcfg)
    except ShapeError as exc:
        return _fail(str(exc), USAGE)
    out = args.out or os.path.join(args.checkpoint, f"eval-{args.split}.json")
    payload = {"checkpoint": args.checkpoint, "split": args.split, "count": len(samples), **report.to_dict()}
    try:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc}", USAGE)
    print(f"split={args.split} n={len(samples)} threshold={report.threshold}")
    print(f"f_beta={report.f_beta:.8f}")
    print(f"mae={report.mae:.8f}")
    return OK


def format_table(rows) -> str:
    header = ("Generation", "Synapses", "Efficiency", "F_beta", "MAE")
    body = [
        (str(r["generation"]), str(r["num_synapses"]), f"{r['efficiency_x']:.2f}X", f"{r['f_beta']:.3f}", f"{r['mae']:.4f}")
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def cmd_report(args) -> int:
    try:
        rows, extra = M.read_lineage_csv(args.lineage)
    except (OSError, ValueError) as exc:
        return _fail(str(exc), USAGE)
    if extra:
        print(f"evosynth: warning: ignoring unknown column(s): {', '.join(extra)}", file=sys.stderr)
    print(format_table(rows))
    return OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evosynth", description="Evolutionary synthesis of sparse neural networks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log synthesis details")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic saliency dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--size", default="64", help="N or HxW (default 64)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    e = sub.add_parser("evolve", help="run the generation loop from a config file")
    e.add_argument("--config", required=True)
    e.add_argument("--out", help="override [output] directory")
    e.set_defaults(func=cmd_evolve)

    v = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True, help="dataset directory or run config file")
    v.add_argument("--split", default="test", choices=("train", "validation", "test"))
    v.add_argument("--fractions", type=float, nargs=3, default=list(DEFAULT_FRACTIONS))
    v.add_argument("--beta-sq", type=float)
    v.add_argument("--threshold", help="'sweep' or a fixed threshold in [0, 1]")
    v.add_argument("--out", help="report path (default <checkpoint>/eval-<split>.json)")
    v.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print a lineage.csv as a table")
    r.add_argument("--lineage", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
