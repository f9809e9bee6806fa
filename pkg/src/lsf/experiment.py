"""Config-driven runs, sweeps and their on-disk outputs.

CSV files report accuracies and A/F/S in percent with four decimals, the
scale of published tables; results.json keeps fractions in [0, 1].
"""
from __future__ import annotations

import copy
import csv
import io
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint, data, models
from .config import ExperimentConfig, to_dict
from .engine import Engine, EngineState, ResultsBundle
from .errors import ConfigurationError
from .losses import FEATURE_SPACES, LOSS_TERMS
from .metrics import lsfm_S

AUX_TERMS = ("in_p", "ex_p", "in_d", "ex_d")
# enabled auxiliary terms per row of the loss ablation; L_pc is on in every row
LOSS_ABLATION = (
    (),
    ("in_p",),
    ("in_p", "ex_p"),
    ("in_d",),
    ("in_d", "ex_d"),
    ("in_p", "ex_p", "in_d"),
    ("in_p", "ex_p", "ex_d"),
    ("in_p", "ex_p", "in_d", "ex_d"),
)
LAMBDA_RATIOS = ("4:1", "2:1", "1:1", "1:2", "1:4")
SWEEPABLE = ("lambda_ratio", "feature_spaces", "losses", "seed", *LOSS_TERMS)

METRICS_HEADER = ["record", "step", "task", "subset", "value"]
TRACES_HEADER = ["step", "epoch", "subset", "accuracy"]
SUMMARY_HEADER = ["value", "A", "F", "S", "seeds"]


def build_dataset(cfg: ExperimentConfig) -> data.Dataset:
    if cfg.dataset.kind == "blobs":
        return data.gen_blobs(cfg.dataset.blobs)
    return data.gen_shapes(cfg.dataset.shapes)


def build_plan(cfg: ExperimentConfig, ds: data.Dataset) -> data.TaskPlan:
    return data.split_tasks(ds.classes, cfg.tasks.tasks, cfg.tasks.deletion_fraction, mode=ds.mode, background=ds.background)


def model_config(cfg: ExperimentConfig) -> models.ModelConfig:
    m = cfg.model
    in_dim = cfg.dataset.blobs.dim if cfg.dataset.kind == "blobs" else cfg.dataset.shapes.channels
    return models.ModelConfig(
        mode=cfg.dataset.mode,
        in_dim=in_dim,
        hidden=tuple(m.hidden),
        feature_dim=m.feature_dim,
        spatial_conv=m.spatial_conv,
        proj_kernel=m.proj_kernel,
        init_scale=m.init_scale,
    )


def run(cfg: ExperimentConfig, out_dir=None, checkpoints: bool = True) -> ResultsBundle:
    """Run the configured task sequence; with ``out_dir`` write every output file."""
    ds = build_dataset(cfg)
    plan = build_plan(cfg, ds)
    out = Path(out_dir) if out_dir is not None else None
    hook = None
    if out is not None and checkpoints:

        def hook(t: int, state: EngineState) -> None:
            checkpoint.save_checkpoint(out / "checkpoints" / f"step{t + 1}", state.model, state.store, step=t + 1)

    engine = Engine(ds, plan, model_config(cfg), cfg.loss, cfg.train, on_step_end=hook)
    bundle = engine.run(config_echo=to_dict(cfg))
    if out is not None:
        write_outputs(bundle, out)
    return bundle


def _pct(v: float | None) -> str:
    return "" if v is None else f"{100.0 * v:.4f}"


def _csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def metrics_csv(bundle: ResultsBundle) -> str:
    """Per-task accuracy records then the step's A/F/S records, step by step.

    Undefined F/S (no deletion in effect yet) produce no row.
    """
    rows = []
    by_step: dict[int, list] = {}
    for r in bundle.metric_records():
        by_step.setdefault(r["step"], []).append(["accuracy", r["step"], r["task"], r["subset"], _pct(r["accuracy"])])
    for s in bundle.summary:
        rows.extend(by_step.get(s["step"], []))
        for key in ("A", "F", "S"):
            if s[key] is not None:
                rows.append([key, s["step"], "", "", _pct(s[key])])
    return _csv(METRICS_HEADER, rows)


def traces_csv(bundle: ResultsBundle) -> str:
    order = {"preserved": 0, "deleted": 1, "current": 2}
    rows = sorted(bundle.traces, key=lambda r: (r["step"], r["epoch"], order[r["subset"]]))
    return _csv(TRACES_HEADER, [[r["step"], r["epoch"], r["subset"], _pct(r["accuracy"])] for r in rows])


def write_outputs(bundle: ResultsBundle, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(json.dumps(bundle.to_dict(), indent=1, sort_keys=True) + "\n")
    (out / "metrics.csv").write_text(metrics_csv(bundle))
    (out / "traces.csv").write_text(traces_csv(bundle))


# -- sweeps -------------------------------------------------------------------


def parse_ratio(value: str) -> tuple[float, float]:
    m = re.fullmatch(r"\s*([0-9.]+)\s*:\s*([0-9.]+)\s*", value)
    if not m:
        raise ConfigurationError(f"lambda_ratio value {value!r} is not of the form a:b")
    a, b = float(m.group(1)), float(m.group(2))
    if a <= 0 or b <= 0:
        raise ConfigurationError("lambda_ratio parts must be positive")
    return a, b


def _parts(value: str) -> list[str]:
    return [p for p in value.replace(" ", "").split("+") if p]


def apply(cfg: ExperimentConfig, param: str, value: str) -> ExperimentConfig:
    """A copy of ``cfg`` with one sweep parameter set from its string value.

    lambda_ratio ``a:b`` keeps λp + λd fixed and splits it a:b, so 1:1 is the
    configured default. ``losses`` takes '+'-joined auxiliary terms (``pc``
    alone for none); a bare term name takes ``on``/``off``.
    """
    cfg = copy.deepcopy(cfg)
    if param == "lambda_ratio":
        a, b = parse_ratio(value)
        total = cfg.loss.lambda_p + cfg.loss.lambda_d
        cfg.loss = replace(cfg.loss, lambda_p=total * a / (a + b), lambda_d=total * b / (a + b))
    elif param == "feature_spaces":
        spaces = _parts(value)
        bad = [s for s in spaces if s not in FEATURE_SPACES]
        if bad or not spaces:
            raise ConfigurationError(f"feature_spaces value {value!r}: use '+'-joined names from {FEATURE_SPACES}")
        cfg.loss = replace(cfg.loss, feature_spaces=tuple(s for s in FEATURE_SPACES if s in spaces))
    elif param == "losses":
        terms = [t for t in _parts(value) if t != "pc"]
        bad = [t for t in terms if t not in AUX_TERMS]
        if bad:
            raise ConfigurationError(f"losses value {value!r}: unknown terms {bad}")
        enabled = dict(cfg.loss.enabled, pc=True, **{t: t in terms for t in AUX_TERMS})
        cfg.loss = replace(cfg.loss, enabled=enabled)
    elif param == "seed":
        try:
            cfg.train = replace(cfg.train, seed=int(value))
        except ValueError as e:
            raise ConfigurationError(f"seed value {value!r} is not an integer") from e
    elif param in LOSS_TERMS:
        if value not in ("on", "off"):
            raise ConfigurationError(f"{param} takes on/off, got {value!r}")
        cfg.loss = replace(cfg.loss, enabled=dict(cfg.loss.enabled, **{param: value == "on"}))
    else:
        raise ConfigurationError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEPABLE)}")
    return cfg


def expand_values(param: str, values: Sequence[str]) -> list[str]:
    """Shorthands: ``ablation`` for the eight loss rows, ``ratios`` for the five λ ratios."""
    out = []
    for v in values:
        if param == "losses" and v == "ablation":
            out.extend("+".join(("pc", *row)) for row in LOSS_ABLATION)
        elif param == "lambda_ratio" and v == "ratios":
            out.extend(LAMBDA_RATIOS)
        else:
            out.append(v)
    return out


@dataclass
class SweepRow:
    value: str
    A: float
    F: float | None
    S: float | None
    seeds: list[int]
    bundles: list[ResultsBundle]


def _slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]", "_", value.replace("*", "s").replace(":", "-"))


def sweep(cfg: ExperimentConfig, param: str, values: Sequence[str], seeds: Sequence[int] | None = None, out_dir=None, checkpoints: bool = False) -> list[SweepRow]:
    """One run per value (and seed); final-step A/F/S averaged over seeds."""
    if param not in SWEEPABLE:
        raise ConfigurationError(f"unknown sweep parameter {param!r}; choose from {', '.join(SWEEPABLE)}")
    values = expand_values(param, values)
    configs = [apply(cfg, param, v) for v in values]  # fail fast on bad values
    seeds = list(seeds) if seeds else [cfg.train.seed]
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    for v, c in zip(values, configs):
        bundles = []
        run_seeds = [c.train.seed] if param == "seed" else seeds  # a seed sweep sets the seed itself
        for s in run_seeds:
            cs = apply(c, "seed", str(s))
            run_dir = None
            if out is not None:
                run_dir = out / f"{param}={_slug(v)}"
                if len(run_seeds) > 1:
                    run_dir = run_dir / f"seed{s}"
            bundles.append(run(cs, run_dir, checkpoints=checkpoints))
        finals = [b.final() for b in bundles]
        A = float(np.mean([f["A"] for f in finals]))
        Fs = [f["F"] for f in finals]
        F = None if any(f is None for f in Fs) else float(np.mean(Fs))
        rows.append(SweepRow(v, A, F, None if F is None else lsfm_S(A, F), run_seeds, bundles))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.csv").write_text(summary_csv(rows))
    return rows


def summary_csv(rows: Sequence[SweepRow]) -> str:
    return _csv(SUMMARY_HEADER, [[r.value, _pct(r.A), _pct(r.F), _pct(r.S), " ".join(map(str, r.seeds))] for r in rows])
