import numpy as np
import pytest

from copygec.autodiff import Tensor, log
from copygec.copying import (
    CopyAttention,
    MixedDistribution,
    balance_factor,
    copy_forward,
    copy_scores,
    gold_probability,
    mix,
)
from copygec.corpus import Vocabulary, extend_source
from copygec.gradcheck import check_gradients
from copygec.model import CopyTransformer, ModelConfig

D = 6


@pytest.fixture
def attn():
    return CopyAttention(D, np.random.default_rng(0))


def states(rng, B=1, N=4, T=None):
    h = rng.standard_normal((B, D) if T is None else (B, T, D))
    return Tensor(h, requires_grad=True), Tensor(rng.standard_normal((B, N, D)), requires_grad=True)


def test_single_source_position_gets_all_copy_mass(attn, rng):
    h, H = states(rng, N=1)
    _, p, _ = copy_scores(h, H, None, attn)
    np.testing.assert_allclose(p.data, [[1.0]])


def test_identical_source_states_share_copy_mass(attn, rng):
    h, H = states(rng, N=3)
    H.data[0, 2] = H.data[0, 0]
    _, p, _ = copy_scores(h, H, None, attn)
    assert p.data[0, 0] == pytest.approx(p.data[0, 2], abs=1e-15)


def test_scores_are_scaled_dot_products(attn, rng):
    h, H = states(rng, N=3)
    scores, _, _ = copy_scores(h, H, None, attn)
    q = h.data @ attn.W_q.data
    K = H.data[0] @ attn.W_k.data
    np.testing.assert_allclose(scores.data[0], K @ q[0] / np.sqrt(D), atol=1e-12)


def test_padding_excluded_and_all_padding_rejected(attn, rng):
    h, H = states(rng, N=3)
    _, p, _ = copy_scores(h, H, np.array([[False, False, True]]), attn)
    assert p.data[0, 2] < 1e-9
    with pytest.raises(ValueError):
        copy_scores(h, H, np.array([[True, True, True]]), attn)


def test_zero_balance_vector_gives_half(attn, rng):
    h, H = states(rng)
    out = copy_forward(h, H, None, attn)
    np.testing.assert_array_equal(out.alpha.data, [0.5])


def test_alpha_strictly_inside_unit_interval(rng):
    att = CopyAttention(D, rng)
    att.w_bal.data[:] = rng.standard_normal(D) * 3
    h, H = states(rng, B=5, T=4)
    alpha = copy_forward(h, H, None, att).alpha.data
    assert np.all((alpha > 0) & (alpha < 1))


def test_balance_factor_definition(rng):
    att = CopyAttention(D, rng)
    att.w_bal.data[:] = rng.standard_normal(D)
    h, H = states(rng, N=3)
    _, p, V = copy_scores(h, H, None, att)
    expected = 1 / (1 + np.exp(-(p.data[0] @ V.data[0]) @ att.w_bal.data))
    assert balance_factor(p, V, att).data[0] == pytest.approx(expected, rel=1e-12)


def test_raw_weighting_uses_unnormalized_scores(rng):
    att = CopyAttention(D, rng, balance_weighting="raw")
    att.w_bal.data[:] = rng.standard_normal(D)
    h, H = states(rng, N=3)
    out = copy_forward(h, H, None, att)
    expected = 1 / (1 + np.exp(-(out.scores.data[0] @ out.values.data[0]) @ att.w_bal.data))
    assert out.alpha.data[0] == pytest.approx(expected, rel=1e-12)


def test_copy_scores_gradient(attn, rng):
    h, H = states(rng, B=2, T=3)
    w = rng.standard_normal((2, 3, 4))
    pad = np.array([[False] * 4, [False, False, True, True]])
    assert check_gradients(lambda: (copy_scores(h, H, pad, attn)[1] * w).sum(), [h, H, attn.W_q, attn.W_k]) < 1e-4


@pytest.mark.parametrize("weighting", ["normalized", "raw"])
def test_alpha_gradient(weighting, rng):
    att = CopyAttention(D, rng, balance_weighting=weighting)
    att.w_bal.data[:] = rng.standard_normal(D) * 0.5
    h, H = states(rng, B=2, T=2)
    pad = np.array([[False] * 4, [False, False, False, True]])
    params = [h, H, att.w_bal, att.W_q, att.W_k, att.W_v]
    assert check_gradients(lambda: (copy_forward(h, H, pad, att).alpha * np.array([[1.0, -2.0], [0.5, 3.0]])).sum(), params) < 1e-4


# -- mixing ------------------------------------------------------------------------------


@pytest.fixture
def vocab():
    return Vocabulary(["the", "cat", "sat", "on", "mat"])


def random_simplex(rng, n):
    x = rng.random(n) + 1e-3
    return x / x.sum()


def test_mixed_distribution_normalization_100_states(vocab, rng):
    src = ["the", "Zyx", "cat", "Zyx", "Qq"]
    for _ in range(100):
        md = MixedDistribution(random_simplex(rng, len(vocab)), random_simplex(rng, len(src)), float(rng.random()), src, vocab)
        assert md.dense().sum() == pytest.approx(1.0, abs=1e-6)
        total = sum(md.prob(md.ext_token(i)) for i in range(md.size))
        assert total == pytest.approx(1.0, abs=1e-6)


def test_surface_probability_formula(vocab, rng):
    src = ["cat", "Zyx", "cat"]
    p_gen, p_copy, a = random_simplex(rng, len(vocab)), np.array([0.2, 0.5, 0.3]), 0.4
    md = MixedDistribution(p_gen, p_copy, a, src, vocab)
    cat = vocab.lookup("cat")
    assert md.prob("cat") == pytest.approx(0.6 * p_gen[cat] + 0.4 * 0.5)
    assert md.prob("Zyx") == pytest.approx(0.4 * 0.5)
    assert md.prob("mat") == pytest.approx(0.6 * p_gen[vocab.lookup("mat")])
    assert md.prob("nowhere") == 0.0


def test_alpha_zero_is_generation(vocab, rng):
    p_gen = random_simplex(rng, len(vocab))
    dense = MixedDistribution(p_gen, np.array([0.5, 0.5]), 0.0, ["cat", "Zyx"], vocab).dense()
    np.testing.assert_array_equal(dense[: len(vocab)], p_gen)
    assert dense[len(vocab)] == 0.0


def test_alpha_one_single_oov_source(vocab, rng):
    md = MixedDistribution(random_simplex(rng, len(vocab)), np.array([1.0]), 1.0, ["Zyx"], vocab)
    assert md.prob("Zyx") == 1.0
    assert all(md.prob(t) == 0.0 for t in vocab.itos)


def test_alpha_monotonicity(vocab, rng):
    p_gen = random_simplex(rng, len(vocab))
    src = ["Zyx", "cat"]
    probs = [MixedDistribution(p_gen, np.array([0.6, 0.4]), a, src, vocab) for a in (0.1, 0.5, 0.9)]
    oov = [m.prob("Zyx") for m in probs]
    gen_only = [m.prob("mat") for m in probs]
    assert oov[0] < oov[1] < oov[2]
    assert gen_only[0] > gen_only[1] > gen_only[2]


def test_batched_mix_matches_single_steps(vocab, rng):
    src = ["the", "Zyx", "Zyx"]
    ext, oov = extend_source(src, vocab)
    P = np.stack([random_simplex(rng, len(vocab)) for _ in range(3)])
    C = np.stack([random_simplex(rng, 3) for _ in range(3)])
    A = rng.random(3)
    batched = mix(P, C, A, np.array(ext), len(oov))
    for k in range(3):
        np.testing.assert_allclose(batched[k], mix(P[k], C[k], A[k], np.array(ext), len(oov)), atol=1e-15)


def test_unk_source_token_scoreable_by_surface(vocab):
    ext, oov = extend_source(["the", "Zyx"], vocab)
    assert oov == ["Zyx"] and ext == [vocab.lookup("the"), len(vocab)]
    md = MixedDistribution(np.full(len(vocab), 1 / len(vocab)), np.array([0.0, 1.0]), 0.7, ["the", "Zyx"], vocab)
    assert md.prob("Zyx") == pytest.approx(0.7)


def test_gold_probability_matches_dense_mixture(vocab, rng):
    src = ["cat", "Zyx", "sat"]
    ext, oov = extend_source(src, vocab)
    V = len(vocab)
    p_gen = np.stack([random_simplex(rng, V) for _ in range(3)])[None]
    p_copy = np.stack([random_simplex(rng, 3) for _ in range(3)])[None]
    alpha = rng.random((1, 3))
    gold = np.array([[vocab.lookup("cat"), V, vocab.lookup("mat")]])
    got = gold_probability(Tensor(p_gen), gold, Tensor(p_copy), Tensor(alpha), np.array([ext]), np.zeros((1, 3), bool)).data
    for t in range(3):
        dense = mix(p_gen[0, t], p_copy[0, t], alpha[0, t], np.array(ext), len(oov))
        assert got[0, t] == pytest.approx(dense[gold[0, t]], rel=1e-12)


def test_loss_gradient_reaches_both_branches():
    vocab = Vocabulary(["a", "b", "c"])
    model = CopyTransformer(ModelConfig(d_model=8, n_layers=1, n_heads=2, d_ffn=16, dropout=0.0, vocab_size=len(vocab)), seed=1)
    model.copy_attn.w_bal.data[:] = 0.3
    src = np.array([[4, 5]])
    enc = model.encode(src)
    h = model.decode(np.array([[2]]), enc).h
    p_gen = model.generation_probs(h)
    c = model.copy_distribution(h, enc)
    gold = gold_probability(p_gen, np.array([[4]]), c.p_copy, c.alpha, src, np.zeros((1, 2), bool))
    loss = -log(gold).sum()
    assert np.isfinite(loss.data)
    loss.backward()
    assert np.abs(model.copy_attn.W_k.grad).sum() > 0
    assert np.abs(model.embed.grad).sum() > 0
    assert np.abs(model.copy_attn.w_bal.grad).sum() > 0
