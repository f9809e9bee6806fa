"""Experiment configuration: JSON file -> validated dataclasses."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema

from .data import BlobSpec, ShapeSceneSpec
from .engine import TrainConfig
from .errors import ConfigurationError
from .losses import FEATURE_SPACES, LOSS_TERMS, LossWeights


def _obj(props: dict, required=()) -> dict:
    out = {"type": "object", "additionalProperties": False, "properties": props}
    if required:
        out["required"] = list(required)
    return out


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_FRAC = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}
_BOOL = {"type": "boolean"}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "LSF experiment",
    **_obj(
        {
            "dataset": _obj(
                {
                    "kind": {"enum": ["blobs", "shapes"]},
                    "blobs": _obj(
                        {
                            "num_classes": _POS_INT,
                            "dim": _POS_INT,
                            "samples_per_class": _POS_INT,
                            "test_per_class": _POS_INT,
                            "separation": _POS,
                            "noise": _NONNEG,
                            "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                            "seed": _INT,
                        }
                    ),
                    "shapes": _obj(
                        {
                            "image_size": _POS_INT,
                            "num_shape_classes": {"type": "integer", "minimum": 1, "maximum": 8},
                            "shapes_per_image": _NONNEG_INT,
                            "train_images": _POS_INT,
                            "test_images": _POS_INT,
                            "min_size": _POS_INT,
                            "max_size": _POS_INT,
                            "color_noise": _NONNEG,
                            "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                            "seed": _INT,
                            "max_retries": _POS_INT,
                            "channels": _POS_INT,
                        }
                    ),
                },
                required=["kind"],
            ),
            "model": _obj(
                {
                    "hidden": {"type": "array", "items": _POS_INT},
                    "feature_dim": {"type": "integer", "minimum": 4},
                    "spatial_conv": _BOOL,
                    "proj_kernel": {"enum": [1, 3]},
                    "init_scale": _POS,
                }
            ),
            "tasks": _obj(
                {
                    "tasks": {"oneOf": [_POS_INT, {"type": "array", "items": _POS_INT, "minItems": 1}]},
                    "deletion_fraction": _FRAC,
                }
            ),
            "loss": _obj(
                {
                    "lambda_p": _NONNEG,
                    "lambda_d": _NONNEG,
                    "epsilon": _POS,
                    "enabled": _obj({t: _BOOL for t in LOSS_TERMS}),
                    "feature_spaces": {"type": "array", "items": {"enum": list(FEATURE_SPACES)}, "uniqueItems": True},
                    "strict_eq1": _BOOL,
                    "ex_p_exclude_deleted": _BOOL,
                    "dis_student_norm": {"enum": ["all", "preserved"]},
                    "pc_include_deleted": _BOOL,
                    "compact_background": _BOOL,
                }
            ),
            "train": _obj(
                {
                    "epochs": _POS_INT,
                    "batch_size": _POS_INT,
                    "lr": _POS,
                    "lr_later": {"oneOf": [_POS, {"type": "null"}]},
                    "poly_power": _NONNEG,
                    "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "weight_decay": _NONNEG,
                    "seed": _INT,
                    "codes_per_class": _POS_INT,
                    "code_sigma": _NONNEG,
                    "probe_size": _NONNEG_INT,
                    "warmup_epochs": _NONNEG_INT,
                    "seg_metric": {"enum": ["recall", "iou"]},
                }
            ),
            "output_dir": {"type": "string"},
        }
    ),
}


@dataclass
class DatasetSection:
    kind: str = "blobs"
    blobs: BlobSpec = field(default_factory=BlobSpec)
    shapes: ShapeSceneSpec = field(default_factory=ShapeSceneSpec)

    @property
    def mode(self) -> str:
        return "classification" if self.kind == "blobs" else "segmentation"


@dataclass
class ModelSection:
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 16
    spatial_conv: bool = True
    proj_kernel: int = 1
    init_scale: float = 1.0


@dataclass
class TaskSection:
    tasks: int | list[int] = 3
    deletion_fraction: float = 0.30


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    tasks: TaskSection = field(default_factory=TaskSection)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    output_dir: str = "runs/default"


def _error_path(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate(raw: dict) -> None:
    """Schema check; raises ConfigurationError naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        raise ConfigurationError(f"config error at {_error_path(e)}: {e.message}")


def _build(cls, values: dict, path: str):
    try:
        return cls(**values)
    except ConfigurationError as e:
        raise ConfigurationError(f"config error at {path}: {e}") from e


def from_dict(raw: dict) -> ExperimentConfig:
    validate(raw)
    raw = copy.deepcopy(raw)
    ds = raw.get("dataset", {})
    dataset = DatasetSection(
        kind=ds.get("kind", "blobs"),
        blobs=_build(BlobSpec, ds.get("blobs", {}), "dataset.blobs"),
        shapes=_build(ShapeSceneSpec, ds.get("shapes", {}), "dataset.shapes"),
    )
    m = raw.get("model", {})
    if "hidden" in m:
        m["hidden"] = tuple(m["hidden"])
    loss = raw.get("loss", {})
    if "feature_spaces" in loss:
        loss["feature_spaces"] = tuple(loss["feature_spaces"])
    return ExperimentConfig(
        dataset=dataset,
        model=_build(ModelSection, m, "model"),
        tasks=_build(TaskSection, raw.get("tasks", {}), "tasks"),
        loss=_build(LossWeights, loss, "loss"),
        train=_build(TrainConfig, raw.get("train", {}), "train"),
        output_dir=raw.get("output_dir", "runs/default"),
    )


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as e:
        raise ConfigurationError(f"cannot read config {p}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {p} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError("config error at <root>: expected a JSON object")
    return from_dict(raw)


def to_dict(cfg: ExperimentConfig) -> dict:
    """Plain-JSON echo of a config; from_dict(to_dict(c)) == c."""

    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, list):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v

    return {f.name: plain(asdict(getattr(cfg, f.name))) if f.name != "output_dir" else cfg.output_dir for f in fields(cfg)}


def schema_json() -> str:
    return json.dumps(SCHEMA, indent=2, sort_keys=True) + "\n"
