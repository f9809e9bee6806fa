"""Deterministic synthetic datasets and task splitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PlacementError
from .losses import ClassPartition

BACKGROUND = 0
SHAPE_NAMES = ("square", "disc", "triangle", "cross", "ring", "diamond", "bar", "hollow_square")


@dataclass
class BlobSpec:
    num_classes: int = 12
    dim: int = 16
    samples_per_class: int = 100
    test_per_class: int = 50
    separation: float = 6.0
    noise: float = 1.0
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class ShapeSceneSpec:
    image_size: int = 32
    num_shape_classes: int = 6
    shapes_per_image: int = 2
    train_images: int = 200
    test_images: int = 100
    min_size: int = 4
    max_size: int = 7
    color_noise: float = 0.25
    val_fraction: float = 0.2
    seed: int = 0
    max_retries: int = 200
    channels: int = 3  # 3 = RGB palette; >= num_shape_classes = one channel per class


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Split":
        idx = np.asarray(idx, dtype=np.int64)
        return Split(self.x[idx], self.y[idx])


@dataclass
class Dataset:
    mode: str
    train: Split
    val: Split
    test: Split
    classes: list[int]
    background: int | None = None
    meta: dict = field(default_factory=dict)


def _check_positive(**kw) -> None:
    for k, v in kw.items():
        if v <= 0:
            raise ConfigurationError(f"{k} must be positive, got {v}")


def _train_val(rng: np.random.Generator, n: int, frac: float) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_val = int(round(frac * n))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def blob_centers(spec: BlobSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    c = rng.normal(size=(spec.num_classes, spec.dim))
    if spec.num_classes > 1:
        d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
        d[np.diag_indices_from(d)] = np.inf
        c *= spec.separation / d.min()
    return c


def gen_blobs(spec: BlobSpec) -> Dataset:
    """Gaussian clusters; the closest pair of centers sits ``separation`` apart."""
    _check_positive(num_classes=spec.num_classes, dim=spec.dim, samples_per_class=spec.samples_per_class, test_per_class=spec.test_per_class)
    if spec.noise < 0:
        raise ConfigurationError("noise must be non-negative")
    centers = blob_centers(spec)
    rng = np.random.default_rng([spec.seed, 1])

    def draw(n):
        y = np.repeat(np.arange(spec.num_classes), n)
        x = centers[y] + spec.noise * rng.normal(size=(len(y), spec.dim))
        return Split(x, y)

    full = draw(spec.samples_per_class)
    test = draw(spec.test_per_class)
    tr, va = _train_val(rng, len(full), spec.val_fraction)
    return Dataset(
        mode="classification",
        train=full.subset(tr),
        val=full.subset(va),
        test=test,
        classes=list(range(spec.num_classes)),
        meta={"centers": centers},
    )


def _shape_mask(kind: str, size: int) -> np.ndarray:
    n = 2 * size + 1
    yy, xx = np.mgrid[-size : size + 1, -size : size + 1]
    r = np.sqrt(xx**2 + yy**2)
    if kind == "square":
        m = np.ones((n, n), bool)
    elif kind == "disc":
        m = r <= size
    elif kind == "triangle":
        m = np.abs(xx) <= (yy + size) / 2.0
    elif kind == "cross":
        w = max(1, size // 3)
        m = (np.abs(xx) <= w) | (np.abs(yy) <= w)
    elif kind == "ring":
        m = (r <= size) & (r >= size * 0.55)
    elif kind == "diamond":
        m = np.abs(xx) + np.abs(yy) <= size
    elif kind == "bar":
        m = np.abs(yy) <= max(1, size // 2)
    elif kind == "hollow_square":
        m = (np.maximum(np.abs(xx), np.abs(yy)) >= size * 0.5)
    else:
        raise ConfigurationError(f"unknown shape {kind!r}")
    return m


def class_colors(num_classes: int, channels: int = 3) -> np.ndarray:
    """Fixed palette, row 0 the background: RGB for 3 channels, else one channel per class."""
    if channels != 3:
        if channels < num_classes:
            raise ConfigurationError(f"{channels} channels cannot give {num_classes} classes their own channel")
        return np.vstack([np.zeros(channels), np.eye(num_classes, channels)])
    base = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
            [1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 0.5, 0.0],
            [0.5, 0.0, 1.0],
        ]
    )
    if num_classes + 1 > len(base):
        raise ConfigurationError(f"at most {len(base) - 1} shape classes are supported")
    return base[: num_classes + 1]


def _layout(spec: ShapeSceneSpec, rng: np.random.Generator):
    """Place shapes_per_image shapes without overlap, or return None."""
    S = spec.image_size
    occupied = np.zeros((S, S), bool)
    placed = []
    for _ in range(spec.shapes_per_image):
        cls = int(rng.integers(1, spec.num_shape_classes + 1))
        for _attempt in range(20):
            size = int(rng.integers(spec.min_size, spec.max_size + 1))
            mask = _shape_mask(SHAPE_NAMES[cls - 1], size)
            n = mask.shape[0]
            if n > S:
                raise PlacementError(f"shape of size {size} does not fit in a {S}×{S} image")
            top = int(rng.integers(0, S - n + 1))
            left = int(rng.integers(0, S - n + 1))
            # one-pixel margin keeps neighbouring shapes apart
            box = (slice(max(0, top - 1), top + n + 1), slice(max(0, left - 1), left + n + 1))
            if not occupied[box].any():
                occupied[box] = True
                placed.append((cls, top, left, mask))
                break
        else:
            return None
    return placed


def _render(spec: ShapeSceneSpec, rng: np.random.Generator, n_images: int):
    S = spec.image_size
    colors = class_colors(spec.num_shape_classes, spec.channels)
    images = np.empty((n_images, spec.channels, S, S))
    labels = np.zeros((n_images, S, S), dtype=np.int64)
    areas = np.zeros((n_images, spec.num_shape_classes + 1), dtype=np.int64)
    for i in range(n_images):
        for _ in range(spec.max_retries):
            placed = _layout(spec, rng)
            if placed is not None:
                break
        else:
            raise PlacementError(f"could not place {spec.shapes_per_image} shapes without overlap after {spec.max_retries} layouts")
        for cls, top, left, mask in placed:
            n = mask.shape[0]
            labels[i, top : top + n, left : left + n][mask] = cls
            areas[i, cls] += int(mask.sum())
        images[i] = colors[labels[i]].transpose(2, 0, 1)
    areas[:, 0] = S * S - areas[:, 1:].sum(axis=1)
    images += spec.color_noise * rng.normal(size=images.shape)
    return images, labels, areas


def gen_shapes(spec: ShapeSceneSpec) -> Dataset:
    """Images of non-overlapping coloured shapes with exact dense labels."""
    _check_positive(image_size=spec.image_size, num_shape_classes=spec.num_shape_classes, train_images=spec.train_images, test_images=spec.test_images)
    if spec.shapes_per_image < 0:
        raise ConfigurationError("shapes_per_image must be non-negative")
    if spec.min_size <= 0 or spec.max_size < spec.min_size:
        raise ConfigurationError("need 0 < min_size <= max_size")
    rng = np.random.default_rng(spec.seed)
    xi, yi, ai = _render(spec, rng, spec.train_images)
    xt, yt, at = _render(spec, rng, spec.test_images)
    tr, va = _train_val(rng, spec.train_images, spec.val_fraction)
    return Dataset(
        mode="segmentation",
        train=Split(xi[tr], yi[tr]),
        val=Split(xi[va], yi[va]),
        test=Split(xt, yt),
        classes=list(range(1, spec.num_shape_classes + 1)),
        background=BACKGROUND,
        meta={"train_areas": ai[tr], "val_areas": ai[va], "test_areas": at},
    )


def n_deleted(n_classes: int, fraction: float) -> int:
    """Leading classes of a task that join the deletion set (rounded up)."""
    # the epsilon keeps 0.3 * 10 from rounding up to 4
    return min(n_classes, math.ceil(fraction * n_classes - 1e-9))


@dataclass
class TaskPlan:
    tasks: list[list[int]]
    deletion_fraction: float = 0.30
    mode: str = "classification"
    background: int | None = None

    def __post_init__(self):
        if not 0.0 < self.deletion_fraction < 1.0:
            raise ConfigurationError("deletion fraction must lie in (0, 1)")
        seen: set[int] = set()
        for t in self.tasks:
            if seen & set(t):
                raise ConfigurationError("task class lists must be disjoint")
            seen |= set(t)
        if self.background is not None and self.background in seen:
            raise ConfigurationError("background id must not be a task class")

    @property
    def num_tasks(self) -> int:
        return len(self.tasks)

    def designated_deleted(self, p: int) -> list[int]:
        """Classes of task p (0-based) that are deleted once the task is past."""
        cls = sorted(self.tasks[p])
        return cls[: n_deleted(len(cls), self.deletion_fraction)]

    def designated_preserved(self, p: int) -> list[int]:
        cls = sorted(self.tasks[p])
        return cls[n_deleted(len(cls), self.deletion_fraction) :]

    def learned_before(self, t: int) -> list[int]:
        return sorted(c for p in range(t) for c in self.tasks[p])

    def deletion_set(self, t: int) -> list[int]:
        return sorted(c for p in range(t) for c in self.designated_deleted(p))

    def preservation_set(self, t: int) -> list[int]:
        dele = set(self.deletion_set(t))
        return [c for c in self.learned_before(t) if c not in dele]

    def partition(self, t: int) -> ClassPartition:
        return ClassPartition(
            current=frozenset(self.tasks[t]),
            preserved=frozenset(self.preservation_set(t)),
            deleted=frozenset(self.deletion_set(t)),
            background=self.background,
        )


def split_tasks(classes: Sequence[int], tasks: int | Sequence[int], deletion_fraction: float = 0.30, mode: str = "classification", background: int | None = None) -> TaskPlan:
    """Split classes, in order, into tasks of equal size (int) or the given sizes."""
    classes = list(classes)
    if isinstance(tasks, int):
        if tasks <= 0 or len(classes) % tasks:
            raise ConfigurationError(f"{len(classes)} classes cannot be split into {tasks} equal tasks")
        sizes = [len(classes) // tasks] * tasks
    else:
        sizes = [int(s) for s in tasks]
        if any(s <= 0 for s in sizes) or sum(sizes) != len(classes):
            raise ConfigurationError(f"task sizes {sizes} do not cover {len(classes)} classes")
    out, i = [], 0
    for s in sizes:
        out.append(classes[i : i + s])
        i += s
    return TaskPlan(tasks=out, deletion_fraction=deletion_fraction, mode=mode, background=background)


def task_view(ds: Dataset, plan: TaskPlan, t: int, split: str = "train") -> Split:
    """Data visible while training task t (overlapped setup for images).

    Classification: only samples of the task's classes. Segmentation: images
    containing at least one task-class pixel, with every other pixel mapped
    to background.
    """
    s: Split = getattr(ds, split)
    cls = np.array(sorted(plan.tasks[t]))
    if ds.mode == "classification":
        return s.subset(np.nonzero(np.isin(s.y, cls))[0])
    has = np.isin(s.y, cls)
    keep = np.nonzero(has.reshape(len(s.y), -1).any(axis=1))[0]
    y = np.where(has[keep], s.y[keep], ds.background)
    return Split(s.x[keep], y)
