"""Summaries of finished runs: forgetting speed, dispersion and ablation effects."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .engine import ResultsBundle


def forgetting_speed(traces: list[dict], threshold: float = 0.30, window: int = 5) -> list[dict]:
    """Per forgetting step: first epoch <= ``window`` with deleted accuracy below
    ``threshold``, and how far preserved accuracy moved from its step-start value.
    """
    out = []
    for step in sorted({r["step"] for r in traces if r["subset"] == "deleted"}):
        acc = {(r["epoch"], r["subset"]): r["accuracy"] for r in traces if r["step"] == step}
        start = acc[(0, "preserved")]
        epochs = [e for e in range(1, window + 1) if (e, "deleted") in acc]
        hit = next((e for e in epochs if acc[(e, "deleted")] < threshold), None)
        moves = [acc[(e, "preserved")] - start for e in epochs]
        out.append({
            "step": step,
            "deleted_start": acc[(0, "deleted")],
            "deleted_min": min(acc[(e, "deleted")] for e in epochs),
            "epoch": hit,
            "preserved_start": start,
            "max_drop": max(-m for m in moves),
            "max_rise": max(moves),
        })
    return out


def dispersion_factors(bundle: ResultsBundle, step: int | None = None) -> dict[str, float]:
    """after/before ratio of the mean distance-to-prototype, per subset, for one forgetting step."""
    if step is None:
        step = max(d["step"] for d in bundle.dispersion)
    out = {}
    for subset in ("deleted", "preserved"):
        ds = [d for d in bundle.dispersion if d["step"] == step and d["subset"] == subset]
        if ds:
            out[subset] = float(np.mean([d["after"] for d in ds]) / np.mean([d["before"] for d in ds]))
    return out


def background_fall(bundle: ResultsBundle, background: int = 0) -> tuple[float, float]:
    """(share of deleted pixels predicted as background, largest share of any preserved class)
    after the last forgetting step."""
    last = bundle.deleted_predictions[-1]
    shares = {int(c): float(v) for c, v in last["shares"].items()}
    preserved = {d["class"] for d in bundle.dispersion if d["step"] == last["step"] and d["subset"] == "preserved"}
    return shares.get(background, 0.0), max((shares.get(c, 0.0) for c in preserved), default=0.0)


def ablation_effects(rows: Mapping[str, Mapping[str, float]]) -> dict:
    """Effects of the deletion terms across the eight loss-ablation rows.

    ``rows`` maps '+'-joined term lists (``pc``, ``pc+in_d``, ...) to A/F/S.
    """
    full = "pc+in_p+ex_p+in_d+ex_d"
    pairs = [("pc", "pc+in_d"), ("pc+in_p+ex_p", "pc+in_p+ex_p+in_d"), ("pc+in_p+ex_p+ex_d", full)]
    return {
        "in_d_F": [(a, b, rows[b]["F"] - rows[a]["F"], rows[a]["F"]) for a, b in pairs],
        "ex_d_A": rows[full]["A"] - rows["pc+in_p+ex_p+in_d"]["A"],
        "best_S": max(rows, key=lambda v: rows[v]["S"]),
    }
