"""λp:λd ratio sweep at a fixed λp + λd, seed-averaged.

    python3 scripts/lambda_sweep.py [--config configs/shapes_4-2.json] [--seeds 1,2,3] [--out runs/lambda_ratio]
"""
import argparse
from pathlib import Path

from lsf import config, experiment, plots

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs/shapes_4-2.json"))
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--out", default="runs/lambda_ratio")
    ap.add_argument("--values", default="ratios", help="comma-separated a:b ratios; 'ratios' = 4:1,2:1,1:1,1:2,1:4")
    args = ap.parse_args()
    cfg = config.load(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = experiment.sweep(cfg, "lambda_ratio", args.values.split(","), seeds=seeds, out_dir=args.out)
    print(f"{'λp:λd':<8} {'A':>7} {'F':>7} {'S':>7}")
    for r in rows:
        print(f"{r.value:<8} {100 * r.A:7.2f} {100 * r.F:7.2f} {100 * r.S:7.2f}")
    A, F = [r.A for r in rows], [r.F for r in rows]
    print("A non-increasing as λd's share grows:", all(b <= a for a, b in zip(A, A[1:])))
    print("F non-decreasing as λd's share grows:", all(b >= a for a, b in zip(F, F[1:])))
    out = Path(args.out)
    (out / "summary.svg").write_text(plots.summary_svg(plots.summary_groups(out), title="λp:λd ratio"))


if __name__ == "__main__":
    main()
