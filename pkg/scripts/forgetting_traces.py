"""Per-epoch probe accuracy of preserved / deleted / current classes for one run.

    python3 scripts/forgetting_traces.py [--config configs/blobs.json] [--out runs/traces]
"""
import argparse
from pathlib import Path

from lsf import config, experiment, plots, report

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs/blobs.json"))
    ap.add_argument("--out", default="runs/traces")
    args = ap.parse_args()
    out = Path(args.out)
    bundle = experiment.run(config.load(args.config), out, checkpoints=False)
    (out / "traces.svg").write_text(plots.traces_svg(plots.read_csv(out / "traces.csv")))
    for s in report.forgetting_speed(bundle.traces):
        hit = f"below 0.30 at epoch {s['epoch']}" if s["epoch"] else "not below 0.30 within 5 epochs"
        print(
            f"step {s['step']}: deleted {s['deleted_start']:.3f} -> {s['deleted_min']:.3f} ({hit}); "
            f"preserved {s['preserved_start']:.3f}, max drop {s['max_drop']:+.3f}, max rise {s['max_rise']:+.3f}"
        )
    f = bundle.final()
    print(f"final A={f['A']:.4f} F={f['F']:.4f} S={f['S']:.4f}; chart: {out / 'traces.svg'}")


if __name__ == "__main__":
    main()
