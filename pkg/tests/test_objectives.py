import math

import numpy as np
import pytest

from conftest import tiny_config
from copygec.autodiff import Tensor
from copygec.corpus import SentencePair, Vocabulary, collate
from copygec.gradcheck import check_gradients
from copygec.model import CopyTransformer
from copygec.objectives import (
    PROB_FLOOR,
    ConfigurationError,
    EditWeights,
    align_labels,
    batch_loss,
    build_copy_task_batch,
    label_loss,
    seq_loss,
    total_loss,
)


def test_edit_weights():
    w = EditWeights(3.0, [False, True, False]).weights()
    np.testing.assert_array_equal(w, [1.0, 3.0, 1.0])
    with pytest.raises(ConfigurationError):
        EditWeights(0.5, [True])


def test_seq_loss_perfect_prediction_is_zero():
    assert seq_loss(Tensor(np.ones((2, 3)))).total.data == 0.0


def test_seq_loss_uniform():
    K, T = 7, 5
    out = seq_loss(Tensor(np.full((1, T), 1.0 / K)))
    assert float(out.total.data) == pytest.approx(T * math.log(K), rel=1e-12)
    assert out.per_token == pytest.approx(math.log(K), rel=1e-12)


def test_seq_loss_lambda_adds_weighted_term(rng):
    p = rng.uniform(0.05, 0.9, size=(1, 6))
    changed = np.zeros((1, 6), dtype=bool)
    changed[0, 2] = True
    plain = float(seq_loss(Tensor(p)).total.data)
    weighted = float(seq_loss(Tensor(p), EditWeights(3.0, changed)).total.data)
    assert weighted == pytest.approx(plain + 2 * -math.log(p[0, 2]), rel=1e-12)


def test_seq_loss_strictly_increasing_in_lambda(rng):
    p = Tensor(rng.uniform(0.05, 0.9, size=(2, 4)))
    changed = np.array([[False, True, False, False], [False, False, False, False]])
    losses = [float(seq_loss(p, EditWeights(lam, changed)).total.data) for lam in (1.0, 1.8, 3.0)]
    assert losses[0] < losses[1] < losses[2]


def test_seq_loss_ignores_padding_and_counts_clamps():
    p = Tensor(np.array([[0.5, 0.0, 0.2]]))
    out = seq_loss(p, None, np.array([[False, False, True]]))
    assert out.tokens == 2 and out.clamped == 1
    assert float(out.total.data) == pytest.approx(-math.log(0.5) - math.log(PROB_FLOOR))


def test_label_loss_zero_weights_is_ln2():
    logits = Tensor(np.zeros((2, 3, 2)))
    loss = label_loss(logits, np.array([[0, 1, 0], [1, 1, 0]]))
    assert float(loss.data) == pytest.approx(math.log(2))


def test_label_loss_gradient(rng):
    logits = Tensor(rng.standard_normal((2, 3, 2)), requires_grad=True)
    labels = np.array([[0, 1, 0], [1, 0, 0]])
    pad = np.array([[False, False, False], [False, False, True]])
    assert check_gradients(lambda: label_loss(logits, labels, pad), [logits]) < 1e-6


def test_align_labels_examples():
    vocab = Vocabulary(list("abcx"))
    same = SentencePair.from_tokens(list("abc"), list("abc"), vocab)
    assert align_labels(same) == ([True] * 3, [False] * 3)
    sub = SentencePair.from_tokens(list("abc"), list("axc"), vocab)
    assert align_labels(sub) == ([True, False, True], [False, True, False])
    dele = SentencePair.from_tokens(list("abc"), list("ac"), vocab)
    assert align_labels(dele)[0] == [True, False, True]


def test_total_loss():
    seq, lab = Tensor(2.0, requires_grad=True), Tensor(0.5, requires_grad=True)
    assert float(total_loss(seq, lab, 1.0, 0.0).data) == 2.0
    assert float(total_loss(seq, lab).data) == 2.5
    with pytest.raises(ConfigurationError):
        total_loss(seq, lab, 1.0, -1.0)


def test_total_loss_gradient_is_sum_of_components(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    (x * x).sum().backward()
    g_seq = x.grad.copy()
    x.zero_grad()
    (x * 3.0).sum().backward()
    g_lab = x.grad.copy()
    x.zero_grad()
    total_loss((x * x).sum(), (x * 3.0).sum()).backward()
    np.testing.assert_allclose(x.grad, g_seq + g_lab)


# -- sentence-level copying batches ------------------------------------------------------


@pytest.fixture
def vocab():
    return Vocabulary(list("abcdefgh"))


def edited_pairs(vocab):
    return [SentencePair.from_tokens(list("abc"), list("abd"), vocab), SentencePair.from_tokens(list("ef"), list("eg"), vocab)]


def test_copy_task_batch_split(vocab, rng):
    batch = build_copy_task_batch(edited_pairs(vocab), [list("hg"), list("abc")], 8, rng, vocab)
    assert len(batch) == 8
    assert sum(p.is_identity for p in batch) == 4
    for p in batch:
        if p.is_identity:
            assert p.src_tokens == p.trg_tokens and all(p.labels)


def test_copy_task_needs_pool(vocab, rng):
    with pytest.raises(ConfigurationError):
        build_copy_task_batch(edited_pairs(vocab), [], 4, rng, vocab)


def _model(vocab, **kw):
    return CopyTransformer(tiny_config(len(vocab), **kw), seed=5)


def test_identity_rows_make_generation_source_blind(vocab):
    model = _model(vocab)
    model.copy_attn.w_bal.data[:] = 0.2
    outs = []
    for src in ([4, 5, 6], [9, 10, 11]):
        enc = model.encode(np.array([src]))
        outs.append(model.decode_step(np.array([[2, 7]]), enc, cross_keep=np.array([False])))
    np.testing.assert_allclose(outs[0].p_gen.data, outs[1].p_gen.data, atol=1e-6)
    assert not np.allclose(outs[0].p_copy.data, outs[1].p_copy.data)


def test_copy_task_masking_locality(vocab):
    model = _model(vocab)
    pair = SentencePair.from_tokens(list("abc"), list("abc"), vocab, is_identity=True)
    out = batch_loss(model, collate([pair], vocab), lam=1.0, label_weight=1.0)
    out.total.backward()
    params = dict(model.named_parameters())
    for name, p in params.items():
        if ".cross_attn." in name:
            assert p.grad is None or not np.any(p.grad), name
    assert np.any(params["copy_attn.W_q"].grad)


def test_flag_off_matches_plain_sequence_loss(vocab):
    model = _model(vocab)
    pairs = edited_pairs(vocab)
    batch = collate(pairs, vocab)
    a = batch_loss(model, batch, lam=1.0, label_weight=0.0)
    b = batch_loss(model, batch, lam=1.0, label_weight=0.0, remove_cross_for_identity=False)
    assert float(a.total.data) == float(b.total.data)


def test_padded_batch_loss_equals_unpadded(vocab):
    model = _model(vocab)
    pairs = edited_pairs(vocab)
    together = batch_loss(model, collate(pairs, vocab), lam=1.8).seq
    alone = [batch_loss(model, collate([p], vocab), lam=1.8).seq for p in pairs]
    assert float(together.total.data) == pytest.approx(sum(float(s.total.data) for s in alone), abs=1e-6)
    assert together.tokens == sum(s.tokens for s in alone)


def test_label_loss_overfits_separable_toy(vocab):
    """20 sentences whose wrong tokens are exactly the 'x'-like ones: loss falls below 0.05."""
    from copygec.objectives import label_loss as loss_fn
    from copygec.train import NAG, OptimizerConfig

    rng = np.random.default_rng(0)
    v = Vocabulary(list("abcdwxyz"))
    model = CopyTransformer(tiny_config(len(v)), seed=2)
    pairs = []
    for _ in range(20):
        src = list(rng.choice(list("abcdwxyz"), size=5))
        trg = [t if t in "abcd" else "a" for t in src]
        pairs.append(SentencePair.from_tokens(src, trg, v))
    batch = collate(pairs, v)
    params = model.named_parameters()
    opt = NAG(params, OptimizerConfig(lr=0.05, momentum=0.9))
    for _ in range(150):
        opt.zero_grad()
        loss = loss_fn(model.label_logits(model.encode(batch.src_ids, batch.src_pad)), batch.labels, batch.src_pad)
        loss.backward()
        opt.step()
    assert float(loss.data) < 0.05


def test_full_loss_gradient_tiny_model(vocab):
    model = _model(vocab)
    model.copy_attn.w_bal.data[:] = np.linspace(-0.5, 0.5, 8)
    pairs = edited_pairs(vocab) + [SentencePair.from_tokens(list("gh"), list("gh"), vocab, is_identity=True)]
    batch = collate(pairs, vocab)
    params = [p for n, p in model.named_parameters() if n in ("embed", "copy_attn.w_bal", "copy_attn.W_k", "label_head.W", "decoder.0.cross_attn.q.W")]
    err = check_gradients(lambda: batch_loss(model, batch, lam=1.8, label_weight=1.0).total, params)
    assert err < 1e-4
