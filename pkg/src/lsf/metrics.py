"""LSFM metric suite: average accuracy A, forgetting F, harmonic mean S."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError


class UndefinedMetricError(ContractError):
    pass


@dataclass
class AccuracyHistory:
    """a[l][p]: accuracy on task p after training step l (both 0-based, l >= p).

    ``preserved`` and ``deleted`` hold the two class subsets of each task
    separately; ``None`` marks an empty subset.
    """

    preserved: list[list[float | None]] = field(default_factory=list)
    deleted: list[list[float | None]] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.preserved)

    def append(self, preserved_row: Sequence[float | None], deleted_row: Sequence[float | None]) -> None:
        l = self.steps
        if len(preserved_row) != l + 1 or len(deleted_row) != l + 1:
            raise ContractError(f"step {l} needs entries for tasks 0..{l}")
        for v in (*preserved_row, *deleted_row):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ContractError(f"accuracy {v} outside [0, 1]")
        self.preserved.append(list(preserved_row))
        self.deleted.append(list(deleted_row))

    @classmethod
    def from_class_accuracy(cls, per_step: Sequence[Mapping[int, float]], preserved_of: Sequence[Sequence[int]], deleted_of: Sequence[Sequence[int]]) -> "AccuracyHistory":
        """Build subset accuracies as means of per-class accuracies."""
        h = cls()
        for l, acc in enumerate(per_step):
            def mean(classes):
                return float(np.mean([acc[c] for c in classes])) if classes else None

            h.append([mean(preserved_of[p]) for p in range(l + 1)], [mean(deleted_of[p]) for p in range(l + 1)])
        return h


def _check_t(history: AccuracyHistory, t: int) -> None:
    if t <= 0:
        raise UndefinedMetricError("metrics need t >= 1 completed steps")
    if t > history.steps:
        raise ContractError(f"only {history.steps} steps recorded, asked for t={t}")


def average_accuracy_A(history: AccuracyHistory, t: int) -> float:
    """Mean preserved-subset accuracy over tasks 1..t after step t (t is 1-based)."""
    _check_t(history, t)
    row = [v for v in history.preserved[t - 1][:t] if v is not None]
    if not row:
        raise UndefinedMetricError(f"no task has preserved classes at step {t}")
    return float(np.mean(row))


def forgetting_terms(history: AccuracyHistory, t: int) -> list[float]:
    """f_t^p = max_{l<=t} a_{l,p} - a_{t,p} on the deleted subset.

    Only tasks whose deletions are in effect at step t contribute, i.e.
    tasks finished before step t (p < t) with a non-empty deleted subset.
    """
    _check_t(history, t)
    out = []
    for p in range(t - 1):
        cur = history.deleted[t - 1][p]
        if cur is None:
            continue
        best = max(history.deleted[l][p] for l in range(p, t))
        out.append(best - cur)
    return out


def forgetting_F(history: AccuracyHistory, t: int) -> float:
    terms = forgetting_terms(history, t)
    if not terms:
        raise UndefinedMetricError(f"no deleted classes are in effect at step {t}")
    return float(np.mean(terms))


def lsfm_S(A: float, F: float) -> float:
    """Harmonic mean 2AF/(A+F); 0 when both are 0."""
    if A < 0 or F < 0:
        raise ContractError("A and F must be non-negative")
    if A == F:
        return float(A)  # exact, and immune to A·A underflow
    return 2.0 * A * F / (A + F)


def summarize(history: AccuracyHistory) -> list[dict]:
    """Per-step records {step, A, F, S}; F and S are None where undefined."""
    rows = []
    for t in range(1, history.steps + 1):
        A = average_accuracy_A(history, t)
        try:
            F = forgetting_F(history, t)
        except UndefinedMetricError:
            F = None
        rows.append({"step": t, "A": A, "F": F, "S": None if F is None else lsfm_S(A, F)})
    return rows


def dispersion_stat(features: np.ndarray, labels: np.ndarray, protos: Mapping[int, np.ndarray], classes) -> dict[int, float]:
    """Mean distance of each class's features to its prototype; empty classes omitted."""
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    out = {}
    for c in sorted(int(c) for c in classes):
        mask = y == c
        if not mask.any() or c not in protos:
            continue
        out[c] = float(np.sqrt(((F[mask] - protos[c]) ** 2).sum(axis=1)).mean())
    return out
