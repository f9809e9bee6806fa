"""In-batch and running global class prototypes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateBatchError, DimensionError, FrozenClassError, UnknownClassError


@dataclass
class PrototypeStore:
    dim: int
    global_: dict[int, np.ndarray] = field(default_factory=dict)
    step_count: dict[int, int] = field(default_factory=dict)
    frozen: set[int] = field(default_factory=set)

    def get(self, c: int) -> np.ndarray:
        # p_c[0] is the zero vector for classes never updated
        return self.global_.get(c, np.zeros(self.dim))

    def __contains__(self, c: int) -> bool:
        return c in self.global_

    def classes(self) -> list[int]:
        return sorted(self.global_)

    def copy(self) -> "PrototypeStore":
        return PrototypeStore(
            dim=self.dim,
            global_={c: v.copy() for c, v in self.global_.items()},
            step_count=dict(self.step_count),
            frozen=set(self.frozen),
        )


def _group_ids(n: int, groups) -> np.ndarray:
    if groups is None:
        return np.zeros(n, dtype=np.int64)
    g = np.asarray(groups, dtype=np.int64)
    if g.shape != (n,):
        raise DimensionError("groups must give one image index per feature")
    return g


def in_batch_weights(labels, groups, classes: Iterable[int], *, strict_eq1: bool = False) -> tuple[list[int], np.ndarray]:
    """Averaging matrix M with p̂ = M @ F for the classes present in the batch.

    Each present class gets a row: the mean over images containing it of the
    per-image mean of its features. With ``strict_eq1`` the outer average
    divides by the number of images in the batch instead.
    """
    y = np.asarray(labels, dtype=np.int64)
    g = _group_ids(len(y), groups)
    n_images = len(np.unique(g))
    present: list[int] = []
    rows = []
    for c in sorted(set(int(c) for c in classes)):
        mask = y == c
        if not mask.any():
            continue
        w = np.zeros(len(y))
        imgs = np.unique(g[mask])
        for img in imgs:
            sel = mask & (g == img)
            w[sel] = 1.0 / sel.sum()
        w /= n_images if strict_eq1 else len(imgs)
        present.append(c)
        rows.append(w)
    M = np.array(rows) if rows else np.zeros((0, len(y)))
    return present, M


def in_batch_prototypes(features, labels, classes: Iterable[int], groups=None, *, strict_eq1: bool = False) -> dict[int, np.ndarray]:
    """Per-class in-batch prototypes for the classes present (values only)."""
    F = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise DegenerateBatchError("in_batch_prototypes needs a non-empty [N×d] feature matrix")
    if len(np.asarray(labels)) != F.shape[0]:
        raise DimensionError("features and labels are not aligned")
    present, M = in_batch_weights(labels, groups, classes, strict_eq1=strict_eq1)
    P = M @ F
    return {c: P[i] for i, c in enumerate(present)}


def in_batch_prototype_tensor(features: Tensor, labels, classes: Iterable[int], groups=None, *, strict_eq1: bool = False) -> tuple[list[int], Tensor]:
    """Differentiable version: returns (present classes, [K×d] prototypes)."""
    if features.ndim != 2 or features.shape[0] == 0:
        raise DegenerateBatchError("in_batch_prototypes needs a non-empty [N×d] feature matrix")
    present, M = in_batch_weights(labels, groups, classes, strict_eq1=strict_eq1)
    return present, ad.matmul(ad.constant(M), features)


def update_global(store: PrototypeStore, batch_protos: Mapping[int, np.ndarray]) -> PrototypeStore:
    """Running arithmetic mean over the batches in which each class appeared."""
    for c in sorted(batch_protos):
        if c in store.frozen:
            raise FrozenClassError(f"class {c} is frozen")
    for c in sorted(batch_protos):
        v = np.asarray(batch_protos[c], dtype=np.float64)
        if v.shape != (store.dim,):
            raise DimensionError(f"prototype for class {c} has shape {v.shape}, expected ({store.dim},)")
        t = store.step_count.get(c, 0) + 1
        store.global_[c] = ((t - 1) * store.get(c) + v) / t
        store.step_count[c] = t
    return store


def freeze_deleted(store: PrototypeStore, deleted: Iterable[int]) -> PrototypeStore:
    deleted = set(int(c) for c in deleted)
    missing = sorted(c for c in deleted if c not in store.global_)
    if missing:
        raise UnknownClassError(f"cannot freeze unknown classes {missing}")
    store.frozen |= deleted
    return store
