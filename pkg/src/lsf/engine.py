"""Task-sequence training with selective forgetting."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from . import metrics, models, prototypes
from .data import Dataset, Split, TaskPlan, task_view
from .errors import ConfigurationError, DimensionError, NumericError
from .losses import ClassPartition, LossWeights
from .models import ModelBundle
from .prototypes import PrototypeStore

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.05
    lr_later: float | None = None  # learning rate for steps after the first
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    codes_per_class: int = 8
    code_sigma: float = 0.05
    probe_size: int = 0  # 0 = whole validation split
    warmup_epochs: int = 0  # CE-only epochs opening step 1 (pretrained-backbone stand-in)
    seg_metric: str = "recall"  # per-class score for images: "recall" (pixel accuracy) or "iou"

    def __post_init__(self):
        for name in ("epochs", "batch_size", "codes_per_class"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.lr <= 0 or (self.lr_later is not None and self.lr_later <= 0):
            raise ConfigurationError("learning rates must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigurationError("warmup_epochs must lie in [0, epochs)")
        if self.seg_metric not in ("recall", "iou"):
            raise ConfigurationError("seg_metric must be 'recall' or 'iou'")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigurationError("momentum must lie in [0, 1) and weight decay be non-negative")


@dataclass
class ClassCodeStore:
    """Stand-in inputs for learned classes: a base code plus seeded jitters."""

    codes: dict[int, np.ndarray] = field(default_factory=dict)

    def add(self, c: int, block: np.ndarray) -> None:
        block = np.array(block, dtype=np.float64)
        block.setflags(write=False)
        self.codes[int(c)] = block

    def batch(self, classes) -> tuple[np.ndarray, np.ndarray]:
        cls = [c for c in sorted(classes) if c in self.codes]
        if not cls:
            return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
        x = np.concatenate([self.codes[c] for c in cls])
        y = np.concatenate([np.full(len(self.codes[c]), c) for c in cls])
        return x, y


def make_class_codes(split: Split, classes, seed: int, k: int = 8, sigma: float = 0.05) -> dict[int, np.ndarray]:
    """Per class: centroid of its inputs followed by k-1 Gaussian jitters of it."""
    out = {}
    for c in sorted(int(c) for c in classes):
        xs = split.x[split.y == c]
        if len(xs) == 0:
            raise ConfigurationError(f"class {c} has no samples to build a code from")
        base = xs.mean(axis=0)
        rng = np.random.default_rng([seed, c])
        jit = base + sigma * rng.normal(size=(k - 1, base.shape[0]))
        out[c] = np.vstack([base, jit])
    return out


def build_pseudo_labels(gt: np.ndarray, teacher: ModelBundle | None, x: np.ndarray, old_classes, background: int = 0, batch: int = 32) -> np.ndarray:
    """Replace background pixels by the teacher's old-class predictions."""
    gt = np.asarray(gt)
    if teacher is None:
        return gt.copy()
    if x.ndim != 4 or gt.shape != (x.shape[0], x.shape[2], x.shape[3]):
        raise DimensionError(f"labels {gt.shape} do not match images {x.shape}")
    pred = np.concatenate([models.predict(teacher, x[i : i + batch]) for i in range(0, len(x), batch)]).reshape(gt.shape)
    old = np.isin(pred, sorted(old_classes))
    return np.where((gt == background) & old, pred, gt)


@dataclass
class SGD:
    """Momentum SGD; updated parameters are rounded to the float32 grid."""

    lr: float
    momentum: float
    weight_decay: float
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, model: ModelBundle, lr: float) -> None:
        for name in sorted(model.params):
            p = model.params[name]
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            v = self.momentum * self.velocity.get(name, 0.0) + g
            self.velocity[name] = v
            models.set_param(model, name, models.to_storage_grid(p.data - lr * v))


@dataclass
class EngineState:
    model: ModelBundle
    store: PrototypeStore
    codes: ClassCodeStore
    teacher: ModelBundle | None = None
    class_acc: list[dict[int, float]] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)
    dispersion: list[dict] = field(default_factory=list)
    losses: list[dict] = field(default_factory=list)
    deleted_predictions: list[dict] = field(default_factory=list)


@dataclass
class ResultsBundle:
    config: dict
    seed: int
    class_accuracy: list[dict[int, float]]
    history: metrics.AccuracyHistory
    summary: list[dict]
    traces: list[dict]
    dispersion: list[dict]
    losses: list[dict]
    wall_clock: float
    deleted_predictions: list[dict] = field(default_factory=list)

    def final(self) -> dict:
        return self.summary[-1]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "class_accuracy": [{str(k): v for k, v in sorted(a.items())} for a in self.class_accuracy],
            "history": {"preserved": self.history.preserved, "deleted": self.history.deleted},
            "summary": self.summary,
            "traces": self.traces,
            "dispersion": self.dispersion,
            "losses": self.losses,
            "deleted_predictions": self.deleted_predictions,
            "wall_clock": self.wall_clock,
        }

    def metric_records(self) -> list[dict]:
        """Flat (step, task, subset, accuracy) records, sorted by (step, task)."""
        rows = []
        for l in range(self.history.steps):
            for p in range(l + 1):
                for subset, mat in (("preserved", self.history.preserved), ("deleted", self.history.deleted)):
                    v = mat[l][p]
                    if v is not None:
                        rows.append({"step": l + 1, "task": p + 1, "subset": subset, "accuracy": v})
        return rows


class Engine:
    """Runs a task plan on a dataset, one step per task.

    ``on_step_end(t, state)`` is called after each step (used for checkpoints).
    """

    def __init__(self, dataset: Dataset, plan: TaskPlan, model_cfg: models.ModelConfig, weights: LossWeights, train: TrainConfig, on_step_end: Callable[[int, EngineState], None] | None = None):
        if dataset.mode != plan.mode:
            raise ConfigurationError(f"dataset mode {dataset.mode} does not match plan mode {plan.mode}")
        expected = list(range(0 if plan.background is None else 1, sum(len(t) for t in plan.tasks) + (0 if plan.background is None else 1)))
        if [c for t in plan.tasks for c in t] != expected or plan.background not in (None, 0):
            raise ConfigurationError("class ids must be consecutive in task order (background 0 for segmentation)")
        self.ds = dataset
        self.plan = plan
        self.mode = plan.mode
        self.weights = weights
        self.train_cfg = train
        self.model_cfg = model_cfg
        self.on_step_end = on_step_end
        self.seg = self.mode == "segmentation"
        self.bg = plan.background
        self.state = EngineState(
            model=models.build_model(model_cfg, seed=train.seed),
            store=PrototypeStore(dim=model_cfg.feature_dim),
            codes=ClassCodeStore(),
        )
        self.probe = self._probe_split()

    # -- evaluation -------------------------------------------------------

    def _probe_split(self) -> Split:
        s = self.ds.val
        n = self.train_cfg.probe_size
        return s if n <= 0 or n >= len(s) else s.subset(np.arange(n))

    def _predict(self, model: ModelBundle, x: np.ndarray) -> np.ndarray:
        bs = 64
        return np.concatenate([models.predict(model, x[i : i + bs]) for i in range(0, len(x), bs)])

    def class_accuracy(self, model: ModelBundle, split: Split, classes) -> dict[int, float]:
        """Per-class accuracy; for images per-pixel recall, or IoU if so configured.

        IoU also counts other pixels predicted as the class, so it registers
        false positives that recall cannot see.
        """
        pred = self._predict(model, split.x)
        y = split.y.reshape(-1)
        iou = self.seg and self.train_cfg.seg_metric == "iou"
        out = {}
        for c in sorted(classes):
            m = y == c
            if m.any():
                hit = int((pred[m] == c).sum())
                denom = int(m.sum()) + (int(((pred == c) & ~m).sum()) if iou else 0)
                out[c] = hit / denom
        return out

    def prediction_shares(self, model: ModelBundle, split: Split, classes) -> dict[int, float]:
        """Fraction of the given classes' samples (pixels) predicted as each class."""
        pred = self._predict(model, split.x)
        mask = np.isin(split.y.reshape(-1), sorted(classes))
        if not mask.any():
            return {}
        ids, counts = np.unique(pred[mask], return_counts=True)
        return {int(c): float(n) / mask.sum() for c, n in zip(ids, counts)}

    def _features(self, model: ModelBundle, x: np.ndarray) -> np.ndarray:
        bs = 64
        rows = []
        with ad.no_grad():
            for i in range(0, len(x), bs):
                rows.append(models.feature_rows(models.encode(model, x[i : i + bs])).data)
        return np.concatenate(rows)

    # -- training ----------------------------------------------------------

    def _batches(self, rng: np.random.Generator, n: int):
        order = rng.permutation(n)
        bs = self.train_cfg.batch_size
        return [order[i : i + bs] for i in range(0, n, bs)]

    def _projected_refs(self, model: ModelBundle, refs: np.ndarray) -> tuple[ad.Tensor, ad.Tensor]:
        # prototypes in F*/F** are the frozen d-dim prototypes pushed through the projections
        def eff(name):
            w = model.params[name]
            k = w.shape[2]
            w2 = ad.reshape(w, (w.shape[0], w.shape[1] * k * k))
            if k == 1:
                return w2
            # a constant field sees the sum of the kernel taps
            tap_sum = np.kron(np.eye(w.shape[1]), np.ones((k * k, 1)))
            return ad.matmul(w2, ad.constant(tap_sum))

        r1 = ad.matmul(ad.constant(refs), ad.transpose(eff("proj1.w")))
        r2 = ad.matmul(r1, ad.transpose(eff("proj2.w")))
        return r1, r2

    def batch_loss(self, x: np.ndarray, y_star: np.ndarray, ce_targets: np.ndarray, partition: ClassPartition, groups: np.ndarray | None, ce_only: bool = False) -> tuple[ad.Tensor, dict[str, ad.Tensor], ad.Tensor, list[int], ad.Tensor]:
        """Forward one batch and build every enabled loss term."""
        st = self.state
        w = self.weights
        if ce_only:
            w = LossWeights(enabled={t: t == "ce" for t in L.LOSS_TERMS})
        model = st.model
        feats = models.encode(model, ad.constant(x))
        logits = models.decode_logits(model, feats)
        rows = models.feature_rows(feats)
        y = y_star.reshape(-1)
        terms: dict[str, ad.Tensor] = {}
        if w.on("ce"):
            terms["ce"] = ad.softmax_cross_entropy(logits, ce_targets.reshape(-1), ignore_index=-1)
        if w.on("dis") and st.teacher is not None:
            with ad.no_grad():
                t_logits = models.decode_logits(st.teacher, models.encode(st.teacher, ad.constant(x)))
            terms["dis"] = L.loss_dis(logits, t_logits, sorted(partition.distilled), student_norm=w.dis_student_norm)
        all_classes = sorted(partition.kept | partition.deleted)
        present, p_hat = prototypes.in_batch_prototype_tensor(rows, y, all_classes, groups, strict_eq1=w.strict_eq1)
        protos = {c: st.store.get(c) for c in all_classes}
        # consistency toward frozen deleted prototypes would undo the dispersion
        learned = set(partition.learned if w.pc_include_deleted else partition.preserved)
        if self.seg and partition.learned:
            learned.add(self.bg)
        if w.on("pc"):
            terms["pc"] = L.loss_pc(protos, present, p_hat, learned)
        if w.on("in_p"):
            terms["in_p"] = L.loss_in_p(rows, y, protos, partition, groups, include_background=w.compact_background)
        if w.on("ex_p"):
            terms["ex_p"] = L.loss_ex_p(present, p_hat, partition, w.epsilon, exclude_deleted=w.ex_p_exclude_deleted)
        if partition.deleted and np.isin(y, sorted(partition.deleted)).any():
            if w.on("in_d"):
                space = {}
                if "F" in w.feature_spaces:
                    space["F"] = L.loss_in_d_space(rows, y, protos, partition, w.epsilon, groups)
                if "F*" in w.feature_spaces or "F**" in w.feature_spaces:
                    f1, f2 = models.project_spaces(model, feats)
                    refs = np.stack([protos[c] if c in protos else np.zeros(rows.shape[1]) for c in y])
                    r1, r2 = self._projected_refs(model, refs)
                    if "F*" in w.feature_spaces:
                        space["F*"] = L.loss_in_d_space(models.feature_rows(f1), y, r1, partition, w.epsilon, groups)
                    if "F**" in w.feature_spaces:
                        space["F**"] = L.loss_in_d_space(models.feature_rows(f2), y, r2, partition, w.epsilon, groups)
                terms["in_d"] = L.loss_in_d_total(space, w.feature_spaces)
            if w.on("ex_d") and self.seg:
                terms["ex_d"] = L.loss_ex_d(rows, y, st.store.get(self.bg), partition, "segmentation", groups)
        total = L.total_loss(terms, w)
        return total, terms, rows, present, p_hat

    def _step_data(self, t: int, partition: ClassPartition):
        """Inputs, y* labels, CE targets and image groups visible at step t."""
        view = task_view(self.ds, self.plan, t)
        if self.seg:
            old = self.plan.learned_before(t)
            y_star = build_pseudo_labels(view.y, self.state.teacher, view.x, old, self.bg)
            ce = y_star.copy()
            ce[np.isin(y_star, sorted(partition.deleted))] = -1
            return view.x, y_star, ce
        return view.x, view.y.copy(), view.y.copy()

    def train_step_task(self, t: int) -> None:
        st, cfg, plan = self.state, self.train_cfg, self.plan
        partition = plan.partition(t)
        if t > 0:
            st.teacher = models.freeze_snapshot(st.model)
            prototypes.freeze_deleted(st.store, [c for c in partition.deleted if c in st.store])
        before = self._dispersion_snapshot(t, partition) if t > 0 else None
        n_new = len(plan.tasks[t]) + (1 if (self.seg and t == 0) else 0)
        models.add_head(st.model, n_new, seed=cfg.seed * 1000 + t + 1)
        x_all, y_all, ce_all = self._step_data(t, partition)
        code_x, code_y = st.codes.batch(partition.learned) if not self.seg else (None, None)
        rng = np.random.default_rng([cfg.seed, t])
        opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
        base_lr = cfg.lr if (t == 0 or cfg.lr_later is None) else cfg.lr_later
        batches_per_epoch = len(self._batches(np.random.default_rng(0), len(x_all)))
        total_iters = cfg.epochs * batches_per_epoch
        it = 0
        self._trace(t, 0, partition)
        for epoch in range(1, cfg.epochs + 1):
            ep_loss, ep_terms = [], {}
            for b, idx in enumerate(self._batches(rng, len(x_all))):
                x, y, ce = x_all[idx], y_all[idx], ce_all[idx]
                groups = None
                if self.seg:
                    groups = np.repeat(np.arange(len(idx)), x.shape[2] * x.shape[3])
                elif code_x is not None and len(code_y):
                    x = np.concatenate([x, code_x])
                    y = np.concatenate([y, code_y])
                    ce = np.concatenate([ce, np.where(np.isin(code_y, sorted(partition.deleted)), -1, code_y)])
                try:
                    warm = t == 0 and epoch <= cfg.warmup_epochs
                    total, terms, rows, present, p_hat = self.batch_loss(x, y, ce, partition, groups, ce_only=warm)
                    for p in st.model.params.values():
                        p.zero_grad()
                    ad.backward(total)
                except NumericError as e:
                    raise NumericError(f"step {t + 1}, epoch {epoch}, batch {b}: {e}") from e
                lr = base_lr * (1.0 - it / total_iters) ** cfg.poly_power
                opt.step(st.model, lr)
                it += 1
                kept = [] if warm else [c for c in present if c in partition.kept]
                keep_idx = [present.index(c) for c in kept]
                prototypes.update_global(st.store, {c: p_hat.data[i] for c, i in zip(kept, keep_idx)})
                ep_loss.append(total.item())
                for k, v in terms.items():
                    ep_terms.setdefault(k, []).append(v.item())
            st.losses.append({"step": t + 1, "epoch": epoch, "total": float(np.mean(ep_loss)), **{k: float(np.mean(v)) for k, v in sorted(ep_terms.items())}})
            self._trace(t, epoch, partition)
        if not self.seg:
            for c, block in make_class_codes(task_view(self.ds, plan, t), plan.tasks[t], seed=cfg.seed * 7919 + t, k=cfg.codes_per_class, sigma=cfg.code_sigma).items():
                st.codes.add(c, block)
        if before is not None:
            self._record_dispersion(t, partition, before)
        st.class_acc.append(self.class_accuracy(st.model, self.ds.test, plan.learned_before(t + 1)))
        if partition.deleted:
            shares = self.prediction_shares(st.model, self.ds.test, partition.deleted)
            st.deleted_predictions.append({"step": t + 1, "shares": {str(c): v for c, v in sorted(shares.items())}})
        if self.on_step_end is not None:
            self.on_step_end(t, st)

    def _trace(self, t: int, epoch: int, partition: ClassPartition) -> None:
        if not self.state.model.head_sizes:
            return
        acc = self.class_accuracy(self.state.model, self.probe, self.plan.learned_before(t + 1))
        groups = {"preserved": partition.preserved, "deleted": partition.deleted, "current": partition.current}
        for name, cls in groups.items():
            vals = [acc[c] for c in sorted(cls) if c in acc]
            if vals:
                self.state.traces.append({"step": t + 1, "epoch": epoch, "subset": name, "accuracy": float(np.mean(vals))})

    def _dispersion_snapshot(self, t: int, partition: ClassPartition) -> dict:
        feats = self._features(self.state.model, self.ds.test.x)
        y = self.ds.test.y.reshape(-1)
        protos = {c: self.state.store.get(c).copy() for c in self.state.store.classes()}
        return {
            "deleted": metrics.dispersion_stat(feats, y, protos, partition.deleted),
            "preserved": metrics.dispersion_stat(feats, y, protos, partition.preserved),
        }

    def _record_dispersion(self, t: int, partition: ClassPartition, before: dict) -> None:
        after = self._dispersion_snapshot(t, partition)
        for subset in ("deleted", "preserved"):
            for c in sorted(before[subset]):
                if c in after[subset]:
                    self.state.dispersion.append({"step": t + 1, "class": c, "subset": subset, "before": before[subset][c], "after": after[subset][c]})

    def run(self, config_echo: dict | None = None) -> ResultsBundle:
        t0 = time.perf_counter()
        for t in range(self.plan.num_tasks):
            log.info("step %d/%d: classes %s", t + 1, self.plan.num_tasks, self.plan.tasks[t])
            try:
                self.train_step_task(t)
            except NumericError as e:
                if str(e).startswith("step "):
                    raise
                raise NumericError(f"step {t + 1}: {e}") from e
        plan = self.plan
        history = metrics.AccuracyHistory.from_class_accuracy(
            self.state.class_acc,
            [plan.designated_preserved(p) for p in range(plan.num_tasks)],
            [plan.designated_deleted(p) for p in range(plan.num_tasks)],
        )
        st = self.state
        return ResultsBundle(
            config=config_echo if config_echo is not None else {"train": asdict(self.train_cfg)},
            seed=self.train_cfg.seed,
            class_accuracy=st.class_acc,
            history=history,
            summary=metrics.summarize(history),
            traces=st.traces,
            dispersion=st.dispersion,
            losses=st.losses,
            deleted_predictions=st.deleted_predictions,
            wall_clock=time.perf_counter() - t0,
        )


def run_sequence(dataset: Dataset, plan: TaskPlan, model_cfg: models.ModelConfig, weights: LossWeights, train: TrainConfig, **kw) -> ResultsBundle:
    return Engine(dataset, plan, model_cfg, weights, train, **kw).run()
