"""Random small instances of every loss term, for finite-difference checks.

Each generator takes a seed and returns ``(build, x)``: ``build`` maps a
tensor holding ``x`` to a scalar loss, so ``fd.check(build, x)`` compares
backward() against central differences.
"""
import numpy as np

from lsf import autodiff as ad
from lsf import data, losses, models, prototypes
from lsf.engine import Engine, TrainConfig
from lsf.losses import ClassPartition, LossWeights

from fd import rel_error

PART = ClassPartition(current={3, 4}, preserved={1}, deleted={2}, background=0)


def _features(rng, n=12, d=6):
    y = rng.permutation(np.resize(np.arange(5), n))  # every class 0..4 present
    return rng.uniform(-2, 2, size=(n, d)), y, np.repeat([0, 1], n // 2)


def _protos(rng, d=6):
    return {c: rng.uniform(-2, 2, size=d) for c in range(5)}


def ce(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(0, 5, size=8)
    t[0] = -1
    return (lambda z: ad.softmax_cross_entropy(z, t, ignore_index=-1)), rng.uniform(-2, 2, size=(8, 5))


def dis(seed):
    rng = np.random.default_rng(seed)
    teacher = rng.uniform(-2, 2, size=(6, 4))
    cols = sorted(rng.choice(4, size=2, replace=False).tolist())
    norm = ("all", "preserved")[seed % 2]
    return (lambda z: losses.loss_dis(z, teacher, cols, student_norm=norm)), rng.uniform(-2, 2, size=(6, 6))


def pc(seed):
    rng = np.random.default_rng(seed)
    protos = _protos(rng)
    present = [0, 1, 2, 3]
    return (lambda p: losses.loss_pc(protos, present, p, {0, 1, 2})), rng.uniform(-2, 2, size=(4, 6))


def in_p(seed):
    rng = np.random.default_rng(seed)
    x, y, g = _features(rng)
    protos = _protos(rng)
    return (lambda f: losses.loss_in_p(f, y, protos, PART, g)), x


def ex_p(seed):
    rng = np.random.default_rng(seed)
    present = [0, 1, 2, 3, 4]
    return (lambda p: losses.loss_ex_p(present, p, PART, 1e-6)), rng.uniform(-2, 2, size=(5, 6))


def in_d_F(seed):
    rng = np.random.default_rng(seed)
    x, y, g = _features(rng)
    protos = _protos(rng)
    return (lambda f: losses.loss_in_d_space(f, y, protos, PART, 1e-6, g)), x


def _projected(seed, level):
    """Dispersion in F* (level 1) or F** (level 2), differentiated w.r.t. proj1.w.

    Features and the frozen prototype are both pushed through the projection,
    so the weights receive gradient from both sides of the distance.
    """
    rng = np.random.default_rng(seed)
    x, y, g = _features(rng, d=8)
    protos = _protos(rng, d=8)
    refs = np.stack([protos[c] for c in y])
    w2 = ad.constant(rng.uniform(-1, 1, size=(2, 4)))

    def build(w1):
        f, r = ad.constant(x), ad.constant(refs)
        f = ad.matmul(f, ad.transpose(w1))
        r = ad.matmul(r, ad.transpose(w1))
        if level == 2:
            f, r = ad.matmul(f, ad.transpose(w2)), ad.matmul(r, ad.transpose(w2))
        return losses.loss_in_d_space(f, y, r, PART, 1e-6, g)

    return build, rng.uniform(-1, 1, size=(4, 8))


def in_d_Fs(seed):
    return _projected(seed, 1)


def in_d_Fss(seed):
    return _projected(seed, 2)


def ex_d(seed):
    rng = np.random.default_rng(seed)
    x, y, g = _features(rng)
    pb = rng.uniform(-2, 2, size=6)
    return (lambda f: losses.loss_ex_d(f, y, pb, PART, "segmentation", g)), x


TERMS = {
    "L_ce": ce,
    "L_dis": dis,
    "L_pc": pc,
    "L_in^p": in_p,
    "L_ex^p": ex_p,
    "L_in^d (F)": in_d_F,
    "L_in^d (F*)": in_d_Fs,
    "L_in^d (F**)": in_d_Fss,
    "L_ex^d": ex_d,
}


# -- total objective through the engine ----------------------------------------


def toy_engine(seed: int) -> tuple[Engine, np.ndarray, np.ndarray, np.ndarray, ClassPartition, np.ndarray]:
    """A two-step segmentation engine paused at the start of its forgetting step.

    Returns the engine plus one batch (x, y*, CE targets, partition, groups)
    with current, preserved, deleted and background pixels present.
    """
    spec = data.ShapeSceneSpec(image_size=12, num_shape_classes=3, shapes_per_image=2, train_images=16, test_images=4, min_size=1, max_size=2, seed=seed)
    ds = data.gen_shapes(spec)
    plan = data.split_tasks(ds.classes, [2, 1], 0.3, mode="segmentation", background=0)
    mc = models.ModelConfig(mode="segmentation", in_dim=3, hidden=(6,), feature_dim=8)
    eng = Engine(ds, plan, mc, LossWeights(lambda_p=0.3, lambda_d=0.3), TrainConfig(epochs=1, batch_size=8, lr=0.05, seed=seed))
    eng.train_step_task(0)
    st = eng.state
    part = plan.partition(1)
    st.teacher = models.freeze_snapshot(st.model)
    prototypes.freeze_deleted(st.store, [c for c in part.deleted if c in st.store])
    models.add_head(st.model, 1, seed=seed + 1)
    rng = np.random.default_rng(seed)
    x = ds.train.x[:2]
    # labels are synthesised so every term is active regardless of the teacher
    y = rng.choice(sorted(part.kept | part.deleted), size=(2, 12, 12))
    ce_t = np.where(np.isin(y, sorted(part.deleted)), -1, y)
    groups = np.repeat(np.arange(2), 144)
    return eng, x, y, ce_t, part, groups


def total_instance(seed: int, coords: int = 12) -> float:
    """Relative error of d L_tot / d θ on ``coords`` sampled parameter entries."""
    eng, x, y, ce_t, part, groups = toy_engine(seed)
    model = eng.state.model
    for p in model.params.values():
        p.zero_grad()
    total, terms, *_ = eng.batch_loss(x, y, ce_t, part, groups)
    assert set(terms) == set(losses.LOSS_TERMS)
    ad.backward(total)
    rng = np.random.default_rng(seed)
    names = sorted(model.params)
    picks = [(n, tuple(rng.integers(0, s) for s in model.params[n].shape)) for n in rng.choice(names, size=coords)]
    analytic = np.array([model.params[n].grad[i] for n, i in picks])
    numeric = []
    for n, i in picks:
        base = model.params[n].data.copy()
        vals = []
        for sgn in (1, -1):
            v = base.copy()
            v[i] += sgn * 1e-5
            models.set_param(model, n, v)
            with ad.no_grad():
                vals.append(eng.batch_loss(x, y, ce_t, part, groups)[0].item())
        models.set_param(model, n, base)
        numeric.append((vals[0] - vals[1]) / 2e-5)
    return rel_error(analytic, np.array(numeric))
