import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gacl import numerics as nx
from gacl.corpus import Gender
from gacl.errors import AllPadded, ConfigError, EmptyPositives, MissingGenderClass
from gacl.losses import ContrastiveConfig, LossWeights, combine, gacl_loss, kd_loss, mt_loss, pair_masks
from gacl.model import pool
from gacl.trainer import Ablation, TrainConfig, finetune_step_losses

from oracles import central_difference, gacl_bruteforce
from toy import perturb, tiny_setup

M, F = Gender.MALE, Gender.FEMALE


@st.composite
def contrastive_cases(draw):
    n = draw(st.integers(2, 6))
    genders = draw(st.lists(st.sampled_from([M, F]), min_size=n, max_size=n).filter(lambda g: len(set(g)) == 2))
    dim = draw(st.integers(2, 5))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    anchors, views = rng.normal(size=(n, dim)), rng.normal(size=(n, dim))
    tau = draw(st.sampled_from([0.05, 0.1, 0.5, 1.0]))
    dropout, inbatch = draw(st.sampled_from([(True, True), (True, False), (False, True)]))
    normalize = draw(st.booleans())
    return anchors, genders, views, tau, dropout, inbatch, normalize


def _has_positive(genders, dropout, inbatch):
    return dropout or (inbatch and any(genders.count(g) > 1 for g in genders))


@settings(max_examples=200)
@given(contrastive_cases())
def test_gacl_matches_bruteforce(case):
    anchors, genders, views, tau, dropout, inbatch, normalize = case
    if not _has_positive(genders, dropout, inbatch):
        return
    cfg = ContrastiveConfig(tau, dropout, inbatch, normalize)
    got = gacl_loss(nx.Tensor(anchors), genders, nx.Tensor(views) if dropout else None, cfg).item()
    want = gacl_bruteforce(anchors.tolist(), genders, views.tolist(), tau, dropout, inbatch, normalize)
    assert abs(got - want) <= 1e-10 * max(1.0, abs(want))


def test_gacl_frozen_value():
    # Hand-computed with tau=1: anchors on the unit circle at 0, 90 and 180 degrees.
    anchors = nx.Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]))
    loss = gacl_loss(anchors, [M, M, F], config=ContrastiveConfig(1.0, False, True)).item()
    # anchor 0: pos cos=0, neg cos=-1 -> -log(1/(1+e^-1)); anchor 1: pos 0, neg 0 -> log 2; anchor 2 has none.
    want = (math.log(1 + math.exp(-1)) + math.log(2)) / 2
    assert abs(loss - want) < 1e-12


def test_gacl_is_invariant_to_embedding_scale(rng):
    a, v = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    g = [M, F, M, F]
    one = gacl_loss(nx.Tensor(a), g, nx.Tensor(v)).item()
    two = gacl_loss(nx.Tensor(a * 7.0), g, nx.Tensor(v * 0.1)).item()
    assert abs(one - two) < 1e-9


def test_pair_masks_exclude_self_and_keep_view_diagonal():
    pos, cand = pair_masks([M, M, F], ContrastiveConfig())
    assert pos.shape == cand.shape == (3, 6)
    assert not pos[np.arange(3), np.arange(3)].any()
    assert pos[np.arange(3), 3 + np.arange(3)].all()
    assert cand[0, 2] and not pos[0, 2]


def test_gacl_error_cases(rng):
    a = nx.Tensor(rng.normal(size=(3, 2)))
    with pytest.raises(MissingGenderClass):
        gacl_loss(a, [M, M, M], a)
    with pytest.raises(MissingGenderClass):
        gacl_loss(a, [M, F, Gender.NONE], a)
    with pytest.raises(EmptyPositives):
        gacl_loss(nx.Tensor(rng.normal(size=(2, 2))), [M, F], config=ContrastiveConfig(0.05, False, True))
    with pytest.raises(ValueError):
        gacl_loss(a, [M, F], a)
    with pytest.raises(ConfigError):
        ContrastiveConfig(temperature=0.0)
    with pytest.raises(ConfigError):
        ContrastiveConfig(include_dropout_positive=False, include_inbatch_positives=False)


def test_mt_loss_matches_manual_cross_entropy(rng):
    logits = rng.normal(size=(2, 3, 5))
    gold = np.array([[1, 4, 0], [2, 2, 3]])
    pad = np.array([[False, False, True], [False, False, False]])
    logp = logits - np.log(np.exp(logits).sum(-1, keepdims=True))
    want = -np.mean([logp[b, t, gold[b, t]] for b in range(2) for t in range(3) if not pad[b, t]])
    assert abs(mt_loss(nx.Tensor(logits), gold, pad).item() - want) < 1e-12
    with pytest.raises(AllPadded):
        mt_loss(nx.Tensor(logits), gold, np.ones_like(pad))


def test_kd_loss_is_teacher_to_student_kl(rng):
    s, t = rng.normal(size=(1, 2, 4)), rng.normal(size=(1, 2, 4))
    pad = np.zeros((1, 2), dtype=bool)
    p = np.exp(t) / np.exp(t).sum(-1, keepdims=True)
    q = np.exp(s) / np.exp(s).sum(-1, keepdims=True)
    want = float(np.mean((p * np.log(p / q)).sum(-1)))
    assert abs(kd_loss(nx.Tensor(s), t, pad).item() - want) < 1e-12
    assert abs(kd_loss(nx.Tensor(t), t, pad).item()) < 1e-12


def test_combine_weights():
    out = combine(2.0, 3.0, 5.0, LossWeights(alpha=0.4, lam=1.0))
    assert out.total == pytest.approx(0.6 * 2 + 0.4 * 3 + 5)
    with pytest.raises(ConfigError):
        LossWeights(alpha=1.5)
    with pytest.raises(ConfigError):
        LossWeights(lam=-1)


# ---------------------------------------------------------------- gradient probes

def _rel_err(a, b):
    # Gradients that are structurally zero (e.g. attention key biases) leave only
    # round-off in the finite difference, so tiny magnitudes are floored.
    return abs(a - b) / max(abs(a), abs(b), 1e-5)


def _probe(model, loss_fn, n_probes, seed):
    rng = np.random.default_rng(seed)
    params = list(model.params.values())
    names = list(model.params)
    analytic = nx.grad(loss_fn(), params)
    worst = 0.0
    for _ in range(n_probes):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        num = central_difference(lambda: loss_fn().item(), params[k].data, idx, eps=1e-5)
        err = _rel_err(analytic[k][idx], num)
        worst = max(worst, err)
        assert err < 1e-4, (names[k], idx, analytic[k][idx], num)
    return worst


LOSSES = {
    "mt": lambda m, t, b: mt_loss(m.decode_logits(m.encode(b.src, True), b.tgt_in, True), b.tgt_out, b.pad_mask),
    "kd": lambda m, t, b: kd_loss(m.decode_logits(m.encode(b.src, True), b.tgt_in, True),
                                  t.decode_logits(t.encode(b.src), b.tgt_in).data, b.pad_mask),
    "gc": lambda m, t, b: gacl_loss(pool(m.encode(b.src, True, 0)), b.genders, pool(m.encode(b.src, True, 1))),
    "full": lambda m, t, b: finetune_step_losses(m, t, b, TrainConfig(batch_size=4), Ablation.FULL).total,
}


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_loss_gradients_match_finite_differences(name):
    model, batch, _ = tiny_setup(seed=1)
    teacher = perturb(model, 5)
    _probe(model, lambda: LOSSES[name](model, teacher, batch), 12, seed=sorted(LOSSES).index(name))
