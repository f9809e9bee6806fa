import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsf import autodiff as ad
from lsf.errors import DegenerateBatchError, FrozenClassError, UnknownClassError
from lsf.prototypes import PrototypeStore, freeze_deleted, in_batch_prototype_tensor, in_batch_prototypes, update_global

seeds = st.integers(0, 2**31 - 1)


def test_mean_of_image_means():
    f = np.array([[1.0, 3.0], [3.0, 5.0], [6.0, 8.0]])
    p = in_batch_prototypes(f, [1, 1, 1], {1}, groups=[0, 0, 1])
    assert np.array_equal(p[1], [4.0, 6.0])


def test_strict_eq1_divides_by_batch_images():
    f = np.array([[1.0, 3.0], [3.0, 5.0], [6.0, 8.0], [0.0, 0.0]])
    p = in_batch_prototypes(f, [1, 1, 1, 2], {1}, groups=[0, 0, 1, 2], strict_eq1=True)
    assert np.allclose(p[1], np.array([2.0, 4.0]) / 3 + np.array([6.0, 8.0]) / 3)


def test_single_feature():
    assert np.array_equal(in_batch_prototypes(np.array([[2.0, -1.0]]), [5], {5})[5], [2.0, -1.0])


def test_empty_batch():
    with pytest.raises(DegenerateBatchError):
        in_batch_prototypes(np.zeros((0, 2)), [], {1})


def test_absent_class_omitted():
    assert set(in_batch_prototypes(np.ones((2, 2)), [1, 1], {1, 2})) == {1}


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_in_batch_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 15
    f = rng.normal(size=(n, 3))
    y = rng.integers(0, 2, size=n)
    g = rng.integers(0, 3, size=n)
    got = in_batch_prototypes(f, y, {0, 1}, groups=g)
    for c in (0, 1):
        means = [f[(y == c) & (g == i)].mean(axis=0) for i in range(3) if ((y == c) & (g == i)).any()]
        if means:
            assert np.abs(got[c] - np.mean(means, axis=0)).max() <= 1e-12


def test_tensor_version_matches_values():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(10, 4))
    y = rng.integers(0, 3, size=10)
    present, P = in_batch_prototype_tensor(ad.tensor(f), y, {0, 1, 2})
    vals = in_batch_prototypes(f, y, {0, 1, 2})
    for i, c in enumerate(present):
        assert np.array_equal(P.data[i], vals[c])


def test_update_global_running_mean():
    s = PrototypeStore(dim=2)
    assert np.array_equal(s.get(7), [0.0, 0.0])
    update_global(s, {1: np.array([2.0, 4.0])})
    assert np.array_equal(s.get(1), [2.0, 4.0])
    update_global(s, {1: np.array([6.0, 8.0])})
    assert np.array_equal(s.get(1), [4.0, 6.0])
    assert s.step_count[1] == 2


def test_fifty_updates_equal_plain_mean():
    rng = np.random.default_rng(1)
    s = PrototypeStore(dim=5)
    seen = []
    for _ in range(50):
        v = rng.normal(size=5)
        seen.append(v)
        update_global(s, {3: v})
    assert np.abs(s.get(3) - np.mean(seen, axis=0)).max() <= 1e-10


def test_freeze_blocks_updates_and_keeps_vector():
    rng = np.random.default_rng(2)
    s = PrototypeStore(dim=2)
    update_global(s, {1: np.array([1.0, 2.0]), 2: np.array([0.0, 1.0])})
    freeze_deleted(s, {1})
    frozen = s.get(1).tobytes()
    with pytest.raises(FrozenClassError):
        update_global(s, {1: np.zeros(2)})
    for _ in range(100):
        update_global(s, {2: rng.normal(size=2)})
    assert s.get(1).tobytes() == frozen
    with pytest.raises(UnknownClassError):
        freeze_deleted(s, {9})


def test_freezing_leaves_other_classes_unchanged():
    rng = np.random.default_rng(3)
    batches = [rng.normal(size=2) for _ in range(20)]
    a, b = PrototypeStore(dim=2), PrototypeStore(dim=2)
    for s in (a, b):
        update_global(s, {1: np.ones(2), 2: np.ones(2)})
    freeze_deleted(b, {1})
    for v in batches:
        update_global(a, {2: v})
        update_global(b, {2: v})
    assert a.get(2).tobytes() == b.get(2).tobytes()


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_order_insensitive_up_to_rounding(seed):
    rng = np.random.default_rng(seed)
    vs = [rng.normal(size=4) for _ in range(30)]
    a, b = PrototypeStore(dim=4), PrototypeStore(dim=4)
    for v in vs:
        update_global(a, {0: v})
    for i in rng.permutation(30):
        update_global(b, {0: vs[i]})
    assert np.abs(a.get(0) - b.get(0)).max() <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_step_count_equals_batches_containing_class(seed):
    rng = np.random.default_rng(seed)
    s = PrototypeStore(dim=2)
    counts = {0: 0, 1: 0}
    for _ in range(20):
        y = rng.integers(0, 2, size=rng.integers(1, 4))
        update_global(s, in_batch_prototypes(rng.normal(size=(len(y), 2)), y, {0, 1}))
        for c in set(y.tolist()):
            counts[c] += 1
    assert {c: s.step_count.get(c, 0) for c in counts} == counts
