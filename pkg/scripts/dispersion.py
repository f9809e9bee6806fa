"""Distance-to-prototype before/after each forgetting step, and where deleted pixels go.

    python3 scripts/dispersion.py [--config configs/shapes_4-2.json] [--seeds 1,2,3]
"""
import argparse
from pathlib import Path

from lsf import config, experiment, report

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs/shapes_4-2.json"))
    ap.add_argument("--seeds", default="1,2,3")
    args = ap.parse_args()
    cfg = config.load(args.config)
    for s in (int(v) for v in args.seeds.split(",")):
        b = experiment.run(experiment.apply(cfg, "seed", str(s)))
        print(f"seed {s}")
        for d in b.dispersion:
            print(f"  step {d['step']} class {d['class']:>2} {d['subset']:<9} {d['before']:8.4f} -> {d['after']:8.4f}  x{d['after'] / d['before']:.2f}")
        for step in sorted({d["step"] for d in b.dispersion}):
            f = report.dispersion_factors(b, step)
            print(f"  step {step}: mean factor deleted x{f.get('deleted', float('nan')):.2f}, preserved x{f.get('preserved', float('nan')):.2f}")
        for p in b.deleted_predictions:
            shares = ", ".join(f"{c}: {v:.3f}" for c, v in sorted(p["shares"].items(), key=lambda kv: -kv[1]))
            print(f"  step {p['step']}: deleted samples predicted as {{{shares}}}")


if __name__ == "__main__":
    main()
