"""Small encoder/decoder networks with growing multi-head outputs."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


@dataclass
class ModelConfig:
    mode: str = "classification"  # or "segmentation"
    in_dim: int = 16  # input features (classification) or input channels (segmentation)
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 16
    spatial_conv: bool = True  # segmentation: first layer is a 3×3 conv
    proj_kernel: int = 1
    init_scale: float = 1.0


@dataclass
class ModelBundle:
    config: ModelConfig
    params: dict[str, Tensor]
    head_sizes: list[int] = field(default_factory=list)
    frozen: bool = False

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    @property
    def num_classes(self) -> int:
        return sum(self.head_sizes)

    def encoder_names(self) -> list[str]:
        return sorted(n for n in self.params if n.startswith("enc"))

    def trainable(self) -> list[Tensor]:
        return [self.params[n] for n in sorted(self.params)]


TeacherSnapshot = ModelBundle


def to_storage_grid(a: np.ndarray) -> np.ndarray:
    """Round to the nearest float32 (kept as float64) so f32 checkpoints are exact."""
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _init(rng: np.random.Generator, shape, fan_in: int, gain: float) -> Tensor:
    return Tensor(to_storage_grid(rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)), requires_grad=True)


def build_model(config: ModelConfig, seed: int) -> ModelBundle:
    d = config.feature_dim
    if d < 4:
        raise ConfigurationError("feature_dim must be at least 4 so both projection heads keep a channel")
    if config.mode not in ("classification", "segmentation"):
        raise ConfigurationError(f"unknown mode {config.mode!r}")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    widths = [config.in_dim, *config.hidden, d]
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        k = 3 if (config.mode == "segmentation" and config.spatial_conv and i == 0) else 1
        params[f"enc{i}.w"] = _init(rng, (b, a, k, k), a * k * k, config.init_scale)
        params[f"enc{i}.b"] = Tensor(np.zeros(b), requires_grad=True)
    pk = config.proj_kernel
    if pk not in (1, 3):
        raise ConfigurationError("proj_kernel must be 1 or 3")
    if pk == 3 and config.mode != "segmentation":
        raise ConfigurationError("3×3 projection heads need spatial features")
    params["proj1.w"] = _init(rng, (d // 2, d, pk, pk), d * pk * pk, 1.0)
    params["proj2.w"] = _init(rng, (d // 4, d // 2, pk, pk), (d // 2) * pk * pk, 1.0)
    return ModelBundle(config=config, params=params, head_sizes=[])


def add_head(model: ModelBundle, n_classes: int, seed: int) -> None:
    """Append a logit head for a new class group; earlier heads are untouched."""
    rng = np.random.default_rng(seed)
    g = len(model.head_sizes)
    d = model.feature_dim
    model.params[f"head{g}.w"] = Tensor(to_storage_grid(rng.normal(0.0, np.sqrt(1.0 / d), size=(n_classes, d, 1, 1))), requires_grad=True)
    model.params[f"head{g}.b"] = Tensor(np.zeros(n_classes), requires_grad=True)
    model.head_sizes.append(n_classes)


def _layer(model: ModelBundle, x: Tensor, name: str, bias: bool = True) -> Tensor:
    w = model.params[f"{name}.w"]
    b = model.params.get(f"{name}.b") if bias else None
    if x.ndim == 2:
        if w.shape[2] != 1:
            raise DimensionError(f"{name}: spatial kernel on non-spatial features")
        if x.shape[1] != w.shape[1]:
            raise DimensionError(f"{name}: expected {w.shape[1]} channels, got {x.shape[1]}")
        out = ad.matmul(x, ad.transpose(ad.reshape(w, w.shape[:2])))
        return ad.add_bias(out, b) if b is not None else out
    return ad.conv2d(x, w, b)


def _check_input(model: ModelBundle, x: Tensor) -> None:
    cfg = model.config
    if cfg.mode == "classification":
        if x.ndim != 2 or x.shape[1] != cfg.in_dim:
            raise DimensionError(f"expected input [B×{cfg.in_dim}], got {x.shape}")
    elif x.ndim != 4 or x.shape[1] != cfg.in_dim:
        raise DimensionError(f"expected input [B×{cfg.in_dim}×H×W], got {x.shape}")


def encode(model: ModelBundle, x) -> Tensor:
    """Feature map F = E(x): [B×d] for vectors, [B×d×H×W] for images."""
    x = ad._as_tensor(x)
    _check_input(model, x)
    names = sorted({n.split(".")[0] for n in model.params if n.startswith("enc")}, key=lambda s: int(s[3:]))
    h = x
    for i, name in enumerate(names):
        h = _layer(model, h, name)
        if i < len(names) - 1:
            h = ad.relu(h)
    return h


def decode_logits(model: ModelBundle, features: Tensor) -> Tensor:
    """Logits over every head ever created, as rows [N×K].

    Image features [B×d×H×W] yield one row per pixel in (b, h, w) order.
    """
    if features.shape[1] != model.feature_dim:
        raise DimensionError(f"features have {features.shape[1]} channels, model expects {model.feature_dim}")
    if not model.head_sizes:
        raise ConfigurationError("model has no heads")
    rows = ad.nchw_to_rows(features) if features.ndim == 4 else features
    parts = [_layer(model, rows, f"head{g}") for g in range(len(model.head_sizes))]
    return parts[0] if len(parts) == 1 else ad.concat_cols(parts)


def project_spaces(model: ModelBundle, features: Tensor) -> tuple[Tensor, Tensor]:
    """Auxiliary spaces F* (d/2 channels) and F** (d/4 channels) for dispersion only."""
    if features.shape[1] != model.feature_dim:
        raise DimensionError(f"features have {features.shape[1]} channels, model expects {model.feature_dim}")
    f1 = _layer(model, features, "proj1", bias=False)
    f2 = _layer(model, f1, "proj2", bias=False)
    return f1, f2


def feature_rows(features: Tensor) -> Tensor:
    return ad.nchw_to_rows(features) if features.ndim == 4 else features


def forward(model: ModelBundle, x) -> tuple[Tensor, Tensor]:
    feats = encode(model, x)
    return feats, decode_logits(model, feats)


def predict(model: ModelBundle, x) -> np.ndarray:
    """Argmax class per sample (or per pixel, flattened in (b, h, w) order)."""
    with ad.no_grad():
        _, logits = forward(model, x)
    return logits.data.argmax(axis=1)


def freeze_snapshot(model: ModelBundle) -> TeacherSnapshot:
    params = {n: Tensor(p.data.copy(), requires_grad=False) for n, p in model.params.items()}
    return ModelBundle(config=copy.deepcopy(model.config), params=params, head_sizes=list(model.head_sizes), frozen=True)


def param_hash(model: ModelBundle) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.params[name].data).tobytes())
    return h.hexdigest()


def set_param(model: ModelBundle, name: str, value: np.ndarray) -> None:
    if model.frozen:
        raise ConfigurationError("cannot modify a frozen teacher snapshot")
    old = model.params[name]
    if old.shape != value.shape:
        raise DimensionError(f"{name}: {value.shape} vs {old.shape}")
    model.params[name] = Tensor(value, requires_grad=True)
