"""Loss ablation: the eight enable combinations of the auxiliary terms, seed-averaged.

    python3 scripts/ablation.py [--config configs/shapes_4-2.json] [--seeds 1,2,3] [--out runs/ablation]
"""
import argparse
from pathlib import Path

from lsf import config, experiment, plots, report

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs/shapes_4-2.json"))
    ap.add_argument("--seeds", default="1,2,3")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()
    cfg = config.load(args.config)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = experiment.sweep(cfg, "losses", ["ablation"], seeds=seeds, out_dir=args.out)
    print(f"{'losses':<26} {'A':>7} {'F':>7} {'S':>7}")
    for r in rows:
        print(f"{r.value:<26} {100 * r.A:7.2f} {100 * r.F:7.2f} {100 * r.S:7.2f}")
    eff = report.ablation_effects({r.value: {"A": r.A, "F": r.F, "S": r.S} for r in rows})
    for a, b, g, _ in eff["in_d_F"]:
        print(f"F gain from in_d: {a} -> {b}: {g:+.4f}")
    print(f"A gain from ex_d (with in_p, ex_p, in_d on): {eff['ex_d_A']:+.4f}")
    print(f"max S: {eff['best_S']}")
    out = Path(args.out)
    (out / "summary.svg").write_text(plots.summary_svg(plots.summary_groups(out), title="Loss ablation"))


if __name__ == "__main__":
    main()
