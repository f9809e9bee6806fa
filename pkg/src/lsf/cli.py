"""Command-line entry point: ``lsf run|sweep|plot|ckpt|export|schema``.

Exit codes: 0 success, 2 usage/config/input errors, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, experiment, plots
from .errors import ConfigurationError, CorruptCheckpointError, NumericError, SchemaError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse already exits 2; keep the message on stderr
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load(args) -> config.ExperimentConfig:
    cfg = config.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = experiment.apply(cfg, "seed", str(args.seed))
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.output_dir)
    bundle = experiment.run(cfg, out, checkpoints=not args.no_checkpoints)
    f = bundle.final()
    parts = [f"A={100 * f['A']:.2f}"] + [f"{k}={100 * f[k]:.2f}" for k in ("F", "S") if f[k] is not None]
    print(f"{out}: " + " ".join(parts))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigurationError("--values is empty")
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = Path(args.out or Path(cfg.output_dir) / f"sweep_{args.param}")
    rows = experiment.sweep(cfg, args.param, values, seeds=seeds, out_dir=out)
    for r in rows:
        fs = "" if r.F is None else f" F={100 * r.F:.2f} S={100 * r.S:.2f}"
        print(f"{args.param}={r.value}: A={100 * r.A:.2f}{fs}")
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    d = Path(args.results)
    if args.kind == "traces":
        src = d / "traces.csv"
        if not src.exists():
            raise FileNotFoundError(f"no traces.csv in {d}")
        svg = plots.traces_svg(plots.read_csv(src))
    else:
        if not (d / "summary.csv").exists() and not (d / "metrics.csv").exists():
            raise FileNotFoundError(f"no summary.csv or metrics.csv in {d}")
        svg = plots.summary_svg(plots.summary_groups(d))
    out = Path(args.out) if args.out else d / f"{args.kind}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(out)
    return EXIT_OK


def cmd_ckpt(args) -> int:
    manifest, arrays = checkpoint.read_blob(args.verify)
    if manifest["kind"] == "checkpoint":
        model, store, _ = checkpoint.load_checkpoint(args.verify)
        print(f"ok: checkpoint step {manifest.get('step')}, {len(model.params)} parameters, {len(store.classes())} prototypes")
    else:
        print(f"ok: {manifest['kind']}, {len(arrays)} sections")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load(args)
    mpath, bpath = checkpoint.export_dataset(experiment.build_dataset(cfg), args.out)
    print(f"{mpath} {bpath}")
    return EXIT_OK


def cmd_schema(args) -> int:
    text = config.schema_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lsf", description="Learning with selective forgetting: desk-scale experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="results directory (default: the config's output_dir)")
    r.add_argument("--no-checkpoints", action="store_true", help="skip per-step checkpoints")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="one run per value of a parameter, plus summary.csv")
    s.add_argument("--config", required=True)
    s.add_argument("--param", required=True, help=", ".join(experiment.SWEEPABLE))
    s.add_argument("--values", required=True, help="comma-separated; 'ratios' (lambda_ratio) and 'ablation' (losses) expand")
    s.add_argument("--seeds", help="comma-separated training seeds to average over")
    s.add_argument("--seed", type=int, help="base training seed")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    pl = sub.add_parser("plot", help="SVG chart from a results directory")
    pl.add_argument("--results", required=True)
    pl.add_argument("--kind", choices=("traces", "summary"), required=True)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)

    c = sub.add_parser("ckpt", help="verify a checkpoint or export (manifest + blob)")
    c.add_argument("--verify", required=True, metavar="PATH")
    c.set_defaults(func=cmd_ckpt)

    e = sub.add_parser("export", help="dump the configured dataset as manifest + f32 blob")
    e.add_argument("--config", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    sc = sub.add_parser("schema", help="print the config JSON schema")
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_schema)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with np.errstate(over="ignore", invalid="ignore"):  # non-finite values surface as NumericError
            return args.func(args)
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, SchemaError, CorruptCheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
