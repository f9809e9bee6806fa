import numpy as np
import pytest

from lsf import data, engine, losses, models
from lsf.engine import Engine, TrainConfig, build_pseudo_labels, make_class_codes
from lsf.errors import ConfigurationError, NumericError
from lsf.losses import LossWeights


def small_blobs(seed=7, classes=6):
    return data.gen_blobs(data.BlobSpec(num_classes=classes, dim=8, samples_per_class=40, test_per_class=20, seed=seed))


def blob_engine(tasks=3, classes=6, weights=None, **train):
    ds = small_blobs(classes=classes)
    plan = data.split_tasks(ds.classes, tasks, 0.3)
    mc = models.ModelConfig(in_dim=8, hidden=(16,), feature_dim=8)
    tc = TrainConfig(**{"epochs": 3, "batch_size": 16, "seed": 1, **train})
    return Engine(ds, plan, mc, weights or LossWeights(), tc)


def test_pseudo_labels(monkeypatch):
    gt = np.array([[[0, 5], [0, 0]]])
    x = np.zeros((1, 3, 2, 2))
    monkeypatch.setattr(models, "predict", lambda teacher, xb: np.array([3, 3, 0, 3]))
    out = build_pseudo_labels(gt, object(), x, old_classes=[3])
    assert out.tolist() == [[[3, 5], [0, 3]]]
    assert build_pseudo_labels(gt, None, x, [3]).tolist() == gt.tolist()
    with pytest.raises(Exception):
        build_pseudo_labels(np.zeros((1, 3, 3)), object(), x, [3])


def test_class_codes():
    split = data.Split(np.tile([[1.0, 2.0]], (4, 1)), np.zeros(4, dtype=int))
    codes = make_class_codes(split, [0], seed=3, k=1000, sigma=0.1)[0]
    assert np.array_equal(codes[0], [1.0, 2.0])
    jit = codes[1:] - codes[0]
    assert np.all(jit != 0) and np.all(np.abs(jit) <= 4 * 0.1 * 1.2)
    assert np.array_equal(codes, make_class_codes(split, [0], seed=3, k=1000, sigma=0.1)[0])
    with pytest.raises(ConfigurationError):
        make_class_codes(split, [1], seed=3)


def test_single_task_reports_A_only():
    b = blob_engine(tasks=1, classes=4).run()
    assert b.final()["F"] is None and b.final()["S"] is None and 0 <= b.final()["A"] <= 1


def test_supervised_loss_decreases():
    w = LossWeights(enabled={t: t == "ce" for t in losses.LOSS_TERMS})
    b = blob_engine(tasks=1, classes=4, weights=w, epochs=5, lr=0.02).run()
    totals = [r["total"] for r in b.losses]
    assert all(a > b for a, b in zip(totals, totals[1:]))


def test_identical_seeds_bit_identical():
    a, b = blob_engine().run(), blob_engine().run()
    da, db = a.to_dict(), b.to_dict()
    da.pop("wall_clock"), db.pop("wall_clock")
    assert da == db


def test_heads_track_learned_classes():
    eng = blob_engine()
    for t in range(3):
        eng.train_step_task(t)
        assert eng.state.model.num_classes == len(eng.plan.learned_before(t + 1))


def test_deleted_prototypes_frozen_and_stable():
    eng = blob_engine()
    eng.train_step_task(0)
    eng.train_step_task(1)
    deleted = eng.plan.deletion_set(1)
    snap = {c: eng.state.store.get(c).tobytes() for c in deleted}
    eng.train_step_task(2)
    assert set(deleted) <= eng.state.store.frozen
    assert {c: eng.state.store.get(c).tobytes() for c in deleted} == snap


def test_first_task_has_no_forgetting_terms():
    eng = blob_engine()
    eng.train_step_task(0)
    assert set(eng.state.losses[0]) <= {"step", "epoch", "total", "ce", "pc", "in_p", "ex_p"}


def test_dispersion_reduces_retained_deleted_accuracy():
    on = blob_engine(epochs=5).run().final()["F"]
    off = blob_engine(epochs=5, weights=LossWeights(enabled={**{t: True for t in losses.LOSS_TERMS}, "in_d": False})).run().final()["F"]
    assert on >= off


def test_numeric_abort_names_position(monkeypatch):
    eng = blob_engine()

    def boom(*a, **k):
        raise NumericError("non-finite")

    monkeypatch.setattr(eng, "batch_loss", boom)
    with pytest.raises(NumericError, match="step 1, epoch 1, batch 0"):
        eng.train_step_task(0)


def test_engine_never_reads_past_task_samples(monkeypatch):
    eng = blob_engine()
    seen = []
    orig = engine.task_view

    def spy(ds, plan, t, split="train"):
        seen.append((t, split))
        return orig(ds, plan, t, split)

    monkeypatch.setattr(engine, "task_view", spy)
    for t in range(3):
        seen.clear()
        eng.train_step_task(t)
        assert {s for s, split in seen if split == "train"} == {t}


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=2, warmup_epochs=2)
    with pytest.raises(ConfigurationError):
        TrainConfig(momentum=1.0)
