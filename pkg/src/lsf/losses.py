"""Prototype contrastive losses for learning with selective forgetting.

All losses take features as rows ``[N×d]`` with integer labels ``[N]``. An
optional ``groups`` array assigns each row to an image; per-image losses are
then averaged over the images of the batch. Without ``groups`` the whole
input is treated as one image (the classification case).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError


FEATURE_SPACES = ("F", "F*", "F**")
LOSS_TERMS = ("ce", "dis", "pc", "in_p", "ex_p", "in_d", "ex_d")


@dataclass(frozen=True)
class ClassPartition:
    current: frozenset[int]
    preserved: frozenset[int]
    deleted: frozenset[int]
    background: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "current", frozenset(self.current))
        object.__setattr__(self, "preserved", frozenset(self.preserved))
        object.__setattr__(self, "deleted", frozenset(self.deleted))
        sets = (self.current, self.preserved, self.deleted)
        if any(a & b for i, a in enumerate(sets) for b in sets[i + 1 :]):
            raise ConfigurationError("current, preserved and deleted classes must be disjoint")
        if self.background is not None and any(self.background in s for s in sets):
            raise ConfigurationError("background id must not appear in the class sets")

    @property
    def learned(self) -> frozenset[int]:
        """Classes learned before the current step (preserved ∪ deleted)."""
        return self.preserved | self.deleted

    @property
    def kept(self) -> frozenset[int]:
        """Classes whose features are compacted: current, preserved and background."""
        extra = {self.background} if self.background is not None else set()
        return self.current | self.preserved | frozenset(extra)

    @property
    def distilled(self) -> frozenset[int]:
        extra = {self.background} if (self.background is not None and self.learned) else set()
        return self.preserved | frozenset(extra)


@dataclass
class LossWeights:
    lambda_p: float = 0.001
    lambda_d: float = 0.001
    epsilon: float = 1e-6
    enabled: dict[str, bool] = field(default_factory=lambda: {t: True for t in LOSS_TERMS})
    feature_spaces: tuple[str, ...] = FEATURE_SPACES
    ex_p_exclude_deleted: bool = False
    strict_eq1: bool = False
    dis_student_norm: str = "preserved"
    pc_include_deleted: bool = False
    compact_background: bool = False

    def __post_init__(self):
        if self.lambda_p < 0 or self.lambda_d < 0:
            raise ConfigurationError("loss weights must be non-negative")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        unknown = set(self.feature_spaces) - set(FEATURE_SPACES)
        if unknown:
            raise ConfigurationError(f"unknown feature spaces {sorted(unknown)}")
        bad = set(self.enabled) - set(LOSS_TERMS)
        if bad:
            raise ConfigurationError(f"unknown loss terms {sorted(bad)}")
        self.enabled = {t: bool(self.enabled.get(t, True)) for t in LOSS_TERMS}
        if self.dis_student_norm not in ("all", "preserved"):
            raise ConfigurationError("dis_student_norm must be 'all' or 'preserved'")

    def on(self, term: str) -> bool:
        return self.enabled[term]


def _zero() -> Tensor:
    return ad.constant(0.0)


def _groups(n: int, groups) -> np.ndarray:
    if groups is None:
        return np.zeros(n, dtype=np.int64)
    g = np.asarray(groups, dtype=np.int64)
    if g.shape != (n,):
        raise DimensionError("groups must give one image index per feature row")
    return g


def _class_normalised_weights(labels: np.ndarray, groups: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Weight 1/(N_c · n_images) for each selected row, N_c counted per image."""
    n_images = len(np.unique(groups))
    w = np.zeros(len(rows))
    for img in np.unique(groups[rows]):
        sel = groups[rows] == img
        n_cls = len(np.unique(labels[rows][sel]))
        w[sel] = 1.0 / (n_cls * n_images)
    return w


def _reference_rows(protos, labels: np.ndarray, rows: np.ndarray, dim: int) -> Tensor:
    if isinstance(protos, Tensor):
        if protos.shape[0] == len(labels):
            return ad.take_rows(protos, rows)
        raise DimensionError("per-row reference tensor must have one row per feature")
    ref = np.stack([np.asarray(protos[int(c)], dtype=np.float64) for c in labels[rows]]) if len(rows) else np.zeros((0, dim))
    if ref.shape[1] != dim:
        raise DimensionError(f"prototype dimension {ref.shape[1]} does not match features {dim}")
    return ad.constant(ref)


def _selected(features: Tensor, labels, classes, groups):
    if features.ndim != 2:
        raise DimensionError(f"expected feature rows [N×d], got {features.shape}")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (features.shape[0],):
        raise DimensionError("features and labels are not aligned")
    g = _groups(len(y), groups)
    rows = np.nonzero(np.isin(y, sorted(classes)))[0]
    return y, g, rows


def loss_in_p(features: Tensor, labels, protos: Mapping[int, np.ndarray], partition: ClassPartition, groups=None, include_background: bool = True) -> Tensor:
    """Compaction: distance of current/preserved features to their global prototypes."""
    classes = partition.kept if include_background else partition.current | partition.preserved
    y, g, rows = _selected(features, labels, classes, groups)
    if len(rows) == 0:
        return _zero()
    diff = ad.sub(ad.take_rows(features, rows), _reference_rows(protos, y, rows, features.shape[1]))
    return ad.weighted_sum(ad.row_norms(diff), _class_normalised_weights(y, g, rows))


def loss_in_d_space(features: Tensor, labels, protos, partition: ClassPartition, epsilon: float = 1e-6, groups=None) -> Tensor:
    """Dispersion: reciprocal distance of deleted-class features to their frozen prototypes.

    ``protos`` is either a class -> vector map or a tensor of per-row
    reference vectors (used for projected spaces).
    """
    y, g, rows = _selected(features, labels, partition.deleted, groups)
    if len(rows) == 0:
        return _zero()
    diff = ad.sub(ad.take_rows(features, rows), _reference_rows(protos, y, rows, features.shape[1]))
    inv = ad.reciprocal(ad.row_norms(diff), epsilon)
    return ad.weighted_sum(inv, _class_normalised_weights(y, g, rows))


def loss_in_d_total(space_losses: Mapping[str, Tensor], feature_spaces: Sequence[str] = FEATURE_SPACES) -> Tensor:
    """Sum of the per-space dispersion losses over the active spaces."""
    out = _zero()
    for name in FEATURE_SPACES:
        if name in feature_spaces and name in space_losses:
            out = ad.add(out, space_losses[name])
    return out


def loss_ex_p(present: Sequence[int], batch_protos: Tensor, partition: ClassPartition, epsilon: float = 1e-6, exclude_deleted: bool = False) -> Tensor:
    """Repulsion between in-batch prototypes of different classes."""
    present = [int(c) for c in present]
    if batch_protos.shape[0] != len(present):
        raise DimensionError("one in-batch prototype row per present class expected")
    anchors = [i for i, c in enumerate(present) if c in partition.kept]
    others = [i for i, c in enumerate(present) if not (exclude_deleted and c in partition.deleted)]
    pairs = [(i, k) for i in anchors for k in others if k != i]
    if len(present) < 2 or not pairs:
        return _zero()
    K = len(present)
    sel = np.zeros((len(pairs), K))
    for r, (i, k) in enumerate(pairs):
        sel[r, i] += 1.0
        sel[r, k] -= 1.0
    diff = ad.matmul(ad.constant(sel), batch_protos)
    inv = ad.reciprocal(ad.row_norms(diff), epsilon)
    return ad.weighted_sum(inv, np.full(len(pairs), 1.0 / len(anchors)))


def loss_ex_d(features: Tensor, labels, background_proto, partition: ClassPartition, mode: str = "segmentation", groups=None) -> Tensor:
    """Pull deleted-class features toward the background prototype (segmentation only)."""
    if mode != "segmentation":
        return _zero()
    if background_proto is None or partition.background is None:
        raise ConfigurationError("segmentation mode needs a background class and prototype")
    y, g, rows = _selected(features, labels, partition.deleted, groups)
    if len(rows) == 0:
        return _zero()
    pb = np.asarray(background_proto, dtype=np.float64)
    if pb.shape != (features.shape[1],):
        raise DimensionError("background prototype has the wrong length")
    diff = ad.sub(ad.take_rows(features, rows), ad.constant(np.tile(pb, (len(rows), 1))))
    return ad.weighted_sum(ad.row_norms(diff), _class_normalised_weights(y, g, rows))


def loss_pc(global_protos: Mapping[int, np.ndarray], present: Sequence[int], batch_protos: Tensor, learned) -> Tensor:
    """Consistency between global and in-batch prototypes of previously learned classes."""
    learned = sorted(set(int(c) for c in learned))
    if not learned:
        return _zero()
    idx = [i for i, c in enumerate(present) if int(c) in learned]
    if not idx:
        return _zero()
    ref = np.stack([np.asarray(global_protos[int(present[i])], dtype=np.float64) for i in idx])
    diff = ad.sub(ad.take_rows(batch_protos, idx), ad.constant(ref))
    return ad.weighted_sum(ad.row_norms(diff), np.full(len(idx), 1.0 / len(learned)))


def loss_dis(student_logits: Tensor, teacher_logits, preserved_cols: Sequence[int], student_norm: str = "all") -> Tensor:
    """Distillation restricted to preserved classes.

    The teacher softmax is renormalised over ``preserved_cols``; the student
    log-probabilities come from a softmax over all its heads (or, with
    ``student_norm='preserved'``, over the preserved columns only).
    """
    cols = sorted(int(c) for c in preserved_cols)
    if not cols:
        return _zero()
    T = teacher_logits.data if isinstance(teacher_logits, Tensor) else np.asarray(teacher_logits, dtype=np.float64)
    if T.ndim != 2 or T.shape[0] != student_logits.shape[0]:
        raise DimensionError(f"teacher logits {T.shape} vs student {student_logits.shape}")
    if max(cols) >= T.shape[1] or T.shape[1] > student_logits.shape[1]:
        raise DimensionError("preserved columns exceed the teacher or student heads")
    tz = T - T.max(axis=1, keepdims=True)
    tp = np.exp(tz)
    tp = tp / tp.sum(axis=1, keepdims=True)
    target = tp[:, cols]
    target = target / target.sum(axis=1, keepdims=True)
    if student_norm == "preserved":
        logp = ad.log_softmax(ad.take_cols(student_logits, cols))
    else:
        logp = ad.take_cols(ad.log_softmax(student_logits), cols)
    n = student_logits.shape[0]
    flat = ad.reshape(logp, (n * len(cols),))
    return ad.weighted_sum(flat, -target.reshape(-1) / n)


def total_loss(terms: Mapping[str, Tensor | None], weights: LossWeights) -> Tensor:
    """L_ce + L_dis + L_pc + λp (L_in^p + L_ex^p) + λd (L_in^d + L_ex^d).

    Disabled or missing terms contribute nothing.
    """
    if weights.lambda_p < 0 or weights.lambda_d < 0:
        raise ConfigurationError("loss weights must be non-negative")

    def get(name):
        t = terms.get(name)
        return t if (t is not None and weights.on(name)) else _zero()

    out = ad.add(ad.add(get("ce"), get("dis")), get("pc"))
    out = ad.add(out, ad.scale(ad.add(get("in_p"), get("ex_p")), weights.lambda_p))
    out = ad.add(out, ad.scale(ad.add(get("in_d"), get("ex_d")), weights.lambda_d))
    return out
