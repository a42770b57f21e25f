import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgmatch import autodiff as ad
from hgmatch.autodiff import Tensor
from hgmatch.config import TrainConfig, VARIANTS
from hgmatch.errors import DataError, NumericError
from hgmatch.graph import NodeType
from hgmatch.params import ModelParams
from hgmatch.pipeline import build_model, train_variant
from hgmatch.trainer import (
    Adam,
    GradCheckReport,
    Trainer,
    TrainingPair,
    build_training_pairs,
    grad_check,
    loss_from_forward,
    posterior,
    relative_error,
)


def test_posterior_equal_scores_is_uniform():
    assert posterior(2.0, [2.0] * 5, gamma=1.0) == pytest.approx(1 / 6)
    assert posterior(2.0, [2.0] * 5, gamma=7.3) == pytest.approx(1 / 6)


def test_posterior_gamma_zero_is_uniform():
    assert posterior(10.0, [0.0, -3.0, 2.0, 1.0, 5.0], gamma=0.0) == pytest.approx(1 / 6)


def test_posterior_numeric_oracle():
    # pos=1, five zeros, gamma=1 -> e/(e+5)
    want = np.e / (np.e + 5.0)
    assert posterior(1.0, [0.0] * 5, gamma=1.0) == pytest.approx(want, abs=1e-6)
    assert abs(want - 0.35219) < 1e-4


def test_posterior_overflow_stable():
    p = posterior(1e4, [9.9e3] * 5, gamma=1.0)
    assert 0.0 < p <= 1.0 and np.isfinite(p)


def test_posterior_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(100):
        scores = rng.normal(scale=5.0, size=6)
        total = sum(
            posterior(scores[i], np.delete(scores, i), gamma=1.3) for i in range(6)
        )
        assert total == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 4.0), st.floats(0.2, 3.0))
def test_posterior_monotone_in_gamma_when_pos_wins(gamma, delta):
    negs = [1.0, 0.5, 0.0, -0.5, 0.2]
    lo = posterior(1.0 + delta + max(negs), negs, gamma=gamma)
    hi = posterior(1.0 + delta + max(negs), negs, gamma=gamma + 0.5)
    assert hi > lo


def make_pairs(dataset, cfg, n=24):
    pairs, _ = build_training_pairs(
        dataset.labels[:n], dataset.cat_index, cfg.negatives, (13, 0)
    )
    return pairs


def test_batch_loss_uniform_scores(tiny_dataset):
    # zero all view-head output weights: every score 0 -> loss = B * ln 6
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    for name in model.params.names():
        if name.startswith("view/") and name.endswith("/W2"):
            model.params[name].data[...] = 0.0
    pairs = make_pairs(tiny_dataset, cfg)
    fwd = model.forward(
        [p.ad for p in pairs], [p.positive_kw for p in pairs] + [n for p in pairs for n in p.negatives]
    )
    loss = loss_from_forward(model, fwd, pairs)
    assert float(loss.data) == pytest.approx(len(pairs) * np.log(6.0), abs=1e-9)


def test_batch_loss_invariant_under_negative_permutation(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    pairs = make_pairs(tiny_dataset, cfg)
    ids = set()
    for p in pairs:
        ids.add(p.ad)
    kw_ids = [p.positive_kw for p in pairs] + [n for p in pairs for n in p.negatives]
    fwd = model.forward(sorted(ids), kw_ids)
    base = float(loss_from_forward(model, fwd, pairs).data)
    rng = np.random.default_rng(5)
    for _ in range(5):
        permuted = [
            TrainingPair(p.ad, p.positive_kw, p.view,
                         tuple(rng.permutation(p.negatives).tolist()))
            for p in pairs
        ]
        got = float(loss_from_forward(model, fwd, permuted).data)
        assert got == pytest.approx(base, abs=1e-9)


def test_batch_loss_matches_posterior_oracle(tiny_dataset):
    # loss == -sum log posterior computed pair by pair from exported vectors
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    pairs = make_pairs(tiny_dataset, cfg, n=12)
    fwd = model.forward(
        [p.ad for p in pairs],
        [p.positive_kw for p in pairs] + [n for p in pairs for n in p.negatives],
    )
    loss = float(loss_from_forward(model, fwd, pairs).data)
    want = 0.0
    for p in pairs:
        from hgmatch.graph import NodeRef

        za = fwd.node(NodeRef(NodeType.AD, p.ad)).per_view[p.view]
        zq = fwd.node(NodeRef(NodeType.KEYWORD, p.positive_kw)).per_view[p.view]
        s_pos = float(za @ zq)
        s_negs = [
            float(za @ fwd.node(NodeRef(NodeType.KEYWORD, n)).per_view[p.view])
            for n in p.negatives
        ]
        want -= np.log(posterior(s_pos, s_negs, cfg.gamma))
    assert loss == pytest.approx(want, rel=1e-9)


def test_perfect_separation_loss_goes_to_zero():
    # direct loss math: one pair, huge positive margin
    p = posterior(50.0, [0.0] * 5, gamma=2.0)
    assert -np.log(p) < 1e-8


def test_build_training_pairs_skips_small_categories(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    pairs, skipped = build_training_pairs(
        tiny_dataset.labels, tiny_dataset.cat_index, 5, (0, 0)
    )
    assert skipped == 0  # synthetic categories are large enough
    assert all(len(p.negatives) == 5 for p in pairs)
    assert all(p.positive_kw not in p.negatives for p in pairs)


def test_adam_zero_lr_keeps_parameters(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11, learning_rate=0.0)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    before = {n: model.params[n].data.copy() for n in model.params.names()}
    trainer = Trainer(model, tiny_dataset.cat_index, tiny_dataset.labels)
    pairs = make_pairs(tiny_dataset, cfg)
    l1 = trainer.step(pairs)
    l2 = trainer.step(pairs)
    assert l1 == l2
    for name in model.params.names():
        assert np.array_equal(before[name], model.params[name].data)


def test_adam_scalar_hand_trace():
    # loss = (w - 3)^2 from w=0: first Adam step is exactly -lr * sign(grad)
    w = Tensor(np.array([0.0]), requires_grad=True)
    params = ModelParams({"w": w}, {})
    opt = Adam(params, lr=0.1)
    for step in range(3):
        w.grad = None
        loss = ((w - 3.0) * (w - 3.0)).sum()
        loss.backward()
        opt.step()
    # hand trace: g1=-6 -> w=0.1; g2=-5.8 -> w ~ 0.19997...; g3 ~ -5.6
    g1 = -6.0
    m = 0.1 * g1
    v = 0.001 * g1 * g1
    w1 = 0.0 - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    assert w1 == pytest.approx(0.1, abs=1e-9)
    assert w.data[0] > 0.28  # keeps moving toward 3
    assert w.data[0] == pytest.approx(0.2999, abs=1e-2)


def test_non_finite_gradient_aborts_with_tensor_name():
    w = Tensor(np.array([1.0]), requires_grad=True)
    params = ModelParams({"bad/tensor": w}, {})
    opt = Adam(params, lr=0.1)
    w.grad = np.array([np.inf])
    with pytest.raises(NumericError, match="bad/tensor"):
        opt.step()


def test_trainer_rejects_unknown_label_nodes(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    with pytest.raises(DataError, match="unknown ad"):
        Trainer(model, tiny_dataset.cat_index, [("ad_click", 10_000, 0)])


def test_trainer_requires_labels_for_active_views(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["single_view"])
    bid_only_labels = [l for l in tiny_dataset.labels if l[0] == "ad_bid"]
    with pytest.raises(DataError, match="no training labels"):
        Trainer(model, tiny_dataset.cat_index, bid_only_labels)


def test_fit_is_bitwise_deterministic(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11, epochs=2, batch_size=64)
    runs = []
    for _ in range(2):
        model, fit = train_variant(tiny_dataset, cfg, VARIANTS["full"])
        runs.append((fit.batch_losses, {n: model.params[n].data.copy() for n in model.params.names()}))
    assert runs[0][0] == runs[1][0]  # bitwise identical loss trajectory
    for name in runs[0][1]:
        assert np.array_equal(runs[0][1][name], runs[1][1][name])


def test_overfit_single_repeated_pair(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11, learning_rate=0.01)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    trainer = Trainer(model, tiny_dataset.cat_index, tiny_dataset.labels)
    pairs = make_pairs(tiny_dataset, cfg, n=4)[:1]
    losses = [trainer.step(pairs) for _ in range(8)]
    # decreasing for at least 3 consecutive evaluations
    drops = [losses[i + 1] < losses[i] for i in range(len(losses) - 1)]
    assert any(drops[i] and drops[i + 1] and drops[i + 2] for i in range(len(drops) - 2))


def test_fit_reduces_loss_on_tiny_dataset(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11, epochs=3,
                      batch_size=64, learning_rate=0.01)
    model, fit = train_variant(tiny_dataset, cfg, VARIANTS["full"])
    assert fit.epoch_losses[-1] < fit.epoch_losses[0]


def test_negatives_resampled_per_epoch(tiny_dataset):
    p0, _ = build_training_pairs(tiny_dataset.labels[:20], tiny_dataset.cat_index, 5, (11, 101, 0))
    p1, _ = build_training_pairs(tiny_dataset.labels[:20], tiny_dataset.cat_index, 5, (11, 101, 1))
    assert [p.negatives for p in p0] != [p.negatives for p in p1]


# --- gradient checking -------------------------------------------------------

def test_relative_error_definition():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(0.0, 5e-9) < 1e-8
    assert relative_error(100.0, 101.0) == pytest.approx(1 / 101)


def test_grad_check_full_model(tiny_dataset):
    cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
    model = build_model(tiny_dataset, cfg, VARIANTS["full"])
    pairs = make_pairs(tiny_dataset, cfg, n=12)
    report = grad_check(model, pairs, probe_count=60, eps=1e-4, seed=3)
    assert report.max_rel_error <= 1e-4


def test_grad_check_sage_and_dssm(tiny_dataset):
    for vname in ("sage", "dssm"):
        cfg = TrainConfig(d=8, l=4, m=5, kappa=2, seed=11)
        model = build_model(tiny_dataset, cfg, VARIANTS[vname])
        pairs = make_pairs(tiny_dataset, cfg, n=8)
        report = grad_check(model, pairs, probe_count=30, eps=1e-4, seed=3)
        assert report.max_rel_error <= 1e-4


def test_grad_check_linear_only_tight():
    # pure linear scoring toy: two tensors, dot-product softmax loss
    rng = np.random.default_rng(0)
    za = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    zk = Tensor(rng.normal(size=(9, 6)), requires_grad=True)

    def loss_fn():
        pos = (ad.gather(za, [0, 1, 2, 3]) * ad.gather(zk, [0, 1, 2, 3])).sum(axis=1, keepdims=True)
        n1 = (ad.gather(za, [0, 1, 2, 3]) * ad.gather(zk, [4, 5, 6, 7])).sum(axis=1, keepdims=True)
        scores = ad.concat_cols([pos, n1])
        return (ad.logsumexp_rows(scores) - pos).sum()

    loss = loss_fn()
    loss.backward()
    eps = 1e-5
    worst = 0.0
    for t in (za, zk):
        for i in range(t.data.size):
            orig = t.data.flat[i]
            t.data.flat[i] = orig + eps
            lp = float(loss_fn().data)
            t.data.flat[i] = orig - eps
            lm = float(loss_fn().data)
            t.data.flat[i] = orig
            worst = max(worst, relative_error(float(t.grad.flat[i]), (lp - lm) / (2 * eps)))
    assert worst <= 1e-6


def test_grad_check_dead_relu_probe():
    # a unit that never activates: analytic and numeric both zero
    w = Tensor(np.array([[-5.0]]), requires_grad=True)
    x = Tensor(np.array([[1.0]]))

    def loss_fn():
        return ad.relu(x @ w).sum()

    loss = loss_fn()
    loss.backward()
    eps = 1e-4
    orig = w.data[0, 0]
    w.data[0, 0] = orig + eps
    lp = float(loss_fn().data)
    w.data[0, 0] = orig - eps
    lm = float(loss_fn().data)
    w.data[0, 0] = orig
    numeric = (lp - lm) / (2 * eps)
    assert abs(float(w.grad[0, 0])) <= 1e-12
    assert abs(numeric) <= 1e-8
