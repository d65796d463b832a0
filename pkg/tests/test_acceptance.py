"""One test per acceptance criterion. Tolerances are pinned as module constants."""

import time
from fractions import Fraction

import numpy as np

from conftest import tiny_config
from copygec import autodiff as ad
from copygec.copying import MixedDistribution
from copygec.corpus import UNK, SentencePair, Vocabulary, collate
from copygec.decode import beam_search, greedy_decode
from copygec.evaluate import f_half
from copygec.gradcheck import check_gradients
from copygec.model import CopyTransformer
from copygec.noising import NoiseConfig, NoiseTrace, corrupt, displacement_histogram, sentence_rng
from copygec.objectives import batch_loss
from copygec.synthetic import run_sentences
from oracles import exhaustive_search
from pipeline import run_pipeline, write_toy_corpus
from test_autodiff import UNARY

GRAD_REL_TOL = 1e-4
GRAD_SECONDS = 120.0
NORM_TOL = 1e-6
NORM_STATES = 100
RATE_LOW, RATE_HIGH = 0.09, 0.11
NOISE_SENTENCES, NOISE_LEN, NOISE_SEED = 10_000, 20, 42
DISPLACEMENT_TOL = 0.02
OVERFIT_ACC, OVERFIT_STEPS, OVERFIT_SECONDS = 0.99, 500, 180.0
OOV_BASELINE_SHARE = 0.5
BEAM_GREEDY_INPUTS = 100
EXHAUSTIVE_MAX_LEN = 3


def test_criterion_01_gradient_suite(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    errors = {}

    def leaf(*shape, positive=False):
        x = rng.standard_normal(shape)
        return ad.Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)

    for name, fn in UNARY.items():
        x = leaf(3, 4)
        x.data[np.abs(x.data) < 1e-3] = 0.5
        w = rng.standard_normal(fn(x).shape)
        errors[name] = check_gradients(lambda: (fn(x) * w).sum(), [x])
    p = leaf(5, positive=True)
    errors["log"] = check_gradients(lambda: (ad.log(p) * np.arange(1.0, 6.0)).sum(), [p])
    errors["clamp_min"] = check_gradients(lambda: (ad.clamp_min(p, 0.7) * np.arange(1.0, 6.0)).sum(), [p])
    for op in ("add", "sub", "mul", "div"):
        a, b = leaf(3, 4), leaf(1, 4, positive=True)
        w = rng.standard_normal((3, 4))
        errors[op] = check_gradients(lambda: (getattr(ad, op)(a, b) * w).sum(), [a, b])
    a, b = leaf(4, 5), leaf(5, 3)
    errors["matmul"] = check_gradients(lambda: (ad.matmul(a, b) * ad.matmul(a, b)).sum(), [a, b])
    x, g, bias = leaf(2, 8), leaf(8), leaf(8)
    wl = rng.standard_normal((2, 8))
    errors["layer_norm"] = check_gradients(lambda: (ad.layer_norm(x, g, bias) * wl).sum(), [x, g, bias])
    table = leaf(6, 3)
    we = rng.standard_normal((2, 3, 3))
    errors["embedding"] = check_gradients(lambda: (ad.embedding(table, np.array([[0, 2, 2], [5, 0, 1]])) * we).sum(), [table])
    xg = leaf(3, 5)
    errors["gather"] = check_gradients(lambda: (ad.gather(xg, np.array([[1], [4], [1]]), axis=-1) * 2.0).sum(), [xg])
    c1, c2 = leaf(2, 3), leaf(2, 3)
    wc = rng.standard_normal((2, 2, 3))
    errors["concat"] = check_gradients(lambda: (ad.concat([c1, c2], axis=0) * wc.reshape(4, 3)).sum(), [c1, c2])
    errors["stack"] = check_gradients(lambda: (ad.stack([c1, c2], axis=1) * wc).sum(), [c1, c2])

    # the complete objective: edit-weighted copy-augmented likelihood + token labelling,
    # with an identity pair (no encoder-decoder attention), an OOV source word and padding
    vocab = Vocabulary(list("abcdefgh"))
    model = CopyTransformer(tiny_config(len(vocab)), seed=5, dtype=np.float64)
    model.copy_attn.w_bal.data[:] = np.linspace(-0.5, 0.5, 8)
    pairs = [
        SentencePair.from_tokens(["a", "Zyx", "c"], ["a", "Zyx", "d"], vocab),
        SentencePair.from_tokens(["e", "f"], ["e", "g", "f"], vocab),
        SentencePair.from_tokens(["g", "h"], ["g", "h"], vocab, is_identity=True),
    ]
    batch = collate(pairs, vocab)
    params = [p for _, p in model.named_parameters()]
    errors["full_loss"] = check_gradients(lambda: batch_loss(model, batch, lam=1.8, label_weight=1.0).total, params)
    seconds = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < GRAD_REL_TOL and seconds < GRAD_SECONDS
    verdict(1, ok, f"{len(errors)} checks, worst {worst}={errors[worst]:.2e} (< {GRAD_REL_TOL}), {seconds:.0f}s (< {GRAD_SECONDS:.0f}s)")
    assert ok


def test_criterion_02_normalization(verdict):
    vocab = Vocabulary(list("abcdef"))
    rng = np.random.default_rng(1)
    worst, alphas = 0.0, []
    for i in range(NORM_STATES):
        model = CopyTransformer(tiny_config(len(vocab)), seed=i, dtype=np.float64)
        model.copy_attn.w_bal.data[:] = rng.standard_normal(8) * 2.0
        src = list(rng.choice(list("abcdef") + ["Zyx", "Qq"], size=int(rng.integers(1, 7))))
        prefix = [2] + list(rng.integers(4, len(vocab), size=int(rng.integers(0, 5))))
        model.eval()
        out = model.decode_step(np.array([prefix]), model.encode(np.array([vocab.encode(src)])))
        alpha = float(out.alpha.data[0])
        md = MixedDistribution(out.p_gen.data[0], out.p_copy.data[0], alpha, src, vocab)
        worst = max(worst, abs(md.dense().sum() - 1.0))
        alphas.append(alpha)
    ok = worst <= NORM_TOL and all(0.0 < a < 1.0 for a in alphas)
    verdict(2, ok, f"{NORM_STATES} states, max |sum - 1| = {worst:.1e}, min alpha {min(alphas):.2e}, min 1 - alpha {1 - max(alphas):.2e}")
    assert ok


def test_criterion_03_metric_exactness(verdict):
    rows = [("65.23", "33.18", "54.67"), ("41.72", "22.00", "35.38")]
    got = [f"{float(f_half(Fraction(p) / 100, Fraction(r) / 100)) * 100:.2f}" for p, r, _ in rows]
    ok = got == [f for _, _, f in rows]
    verdict(3, ok, f"F0.5 = {got[0]} and {got[1]} (expected 54.67 and 35.38)")
    assert ok


def _simulated_histogram(lengths, sigma, seed, max_bucket=3):
    rng = np.random.default_rng(seed)
    perms = []
    for n in lengths:
        keys = np.arange(n) + rng.normal(0.0, sigma, size=n)
        perms.append(np.argsort(keys, kind="stable").tolist())
    return displacement_histogram(perms, max_bucket)


def test_criterion_04_noising_audit(verdict):
    vocab = [f"w{i}" for i in range(1000)]
    cfg = NoiseConfig(rng_seed=NOISE_SEED)
    data_rng = np.random.default_rng(NOISE_SEED)
    total = NoiseTrace()
    perms = []
    for k in range(NOISE_SENTENCES):
        sent = [vocab[i] for i in data_rng.integers(0, len(vocab), size=NOISE_LEN)]
        tr = NoiseTrace()
        corrupt(sent, cfg, sentence_rng(NOISE_SEED, k), vocab, tr)
        for f in ("n_clean", "deleted", "gaps", "inserted", "replace_trials", "replaced"):
            setattr(total, f, getattr(total, f) + getattr(tr, f))
        perms.append(tr.permutation)
    rates = {
        "delete": total.deleted / total.n_clean,
        "insert": total.inserted / total.gaps,
        "replace": total.replaced / total.replace_trials,
    }
    observed = displacement_histogram(perms)
    simulated = _simulated_histogram([len(p) for p in perms], cfg.shuffle_sigma, seed=2024)
    gap = max(abs(observed[b] - simulated[b]) for b in observed)
    ok = all(RATE_LOW <= r <= RATE_HIGH for r in rates.values()) and gap <= DISPLACEMENT_TOL
    rate_txt = " ".join(f"{k}={v:.4f}" for k, v in rates.items())
    verdict(4, ok, f"{rate_txt}; displacement max bucket gap {gap:.4f} (<= {DISPLACEMENT_TOL})")
    assert ok


def test_criterion_05_overfit(verdict, overfit_run):
    acc = max(a for s, a in overfit_run.accuracy.items() if s <= OVERFIT_STEPS)
    first = min((s for s, a in overfit_run.accuracy.items() if a >= OVERFIT_ACC), default=None)
    ok = acc >= OVERFIT_ACC and overfit_run.seconds < OVERFIT_SECONDS
    verdict(5, ok, f"accuracy {acc:.4f} (first >= {OVERFIT_ACC} at step {first}), {overfit_run.seconds:.0f}s (< {OVERFIT_SECONDS:.0f}s)")
    assert ok


def test_criterion_06_copy_vs_baseline_oov(verdict, oov_run):
    copy_unk = sum(UNK in out for out in oov_run.copy.outputs)
    base = oov_run.baseline
    share = base.output_unk_sentences / base.oov_sentences
    ok = copy_unk == 0 and share >= OOV_BASELINE_SHARE and oov_run.copy.f05 > base.f05
    verdict(
        6,
        ok,
        f"OOV share {oov_run.oov_share:.3f}; copy unk sentences {copy_unk}; baseline unk on {base.output_unk_sentences}/{base.oov_sentences}"
        f" OOV sentences; F0.5 copy {oov_run.copy.f05:.4f} vs baseline {base.f05:.4f}",
    )
    assert ok


def test_criterion_07_pretraining_direction(verdict, pretrain_run):
    f, nf = pretrain_run.dev_f05, pretrain_run.dev_loss_no_finetune
    ok = f["full_dae"] > f["random"] and nf["full_dae"] < nf["random"]
    verdict(7, ok, f"F0.5 dae {f['full_dae']:.4f} > random {f['random']:.4f}; no-finetune dev loss dae {nf['full_dae']:.3f} < random {nf['random']:.3f}")
    assert ok


def test_criterion_08_decoder_only_vs_full(verdict, pretrain_run):
    f = pretrain_run.dev_f05
    ok = f["full_dae"] >= f["decoder_only"] >= f["random"] and f["full_dae"] > f["random"]
    verdict(8, ok, f"F0.5 full {f['full_dae']:.4f} >= decoder-only {f['decoder_only']:.4f} >= random {f['random']:.4f}")
    assert ok


def test_criterion_09_copy_task_alpha_gap(verdict, alpha_run):
    with_gap, without_gap = alpha_run.gap(alpha_run.with_task), alpha_run.gap(alpha_run.without_task)
    ok = with_gap > without_gap
    verdict(
        9,
        ok,
        f"with task {alpha_run.with_task[0]:.3f}/{alpha_run.with_task[1]:.3f} (gap {with_gap:.3f}); "
        f"without {alpha_run.without_task[0]:.3f}/{alpha_run.without_task[1]:.3f} (gap {without_gap:.3f})",
    )
    assert ok


def test_criterion_10_beam_properties(verdict, overfit_run):
    rng = np.random.default_rng(10)
    inputs = [s for s, _ in overfit_run.raw] + run_sentences(rng, BEAM_GREEDY_INPUTS - len(overfit_run.raw), overfit_run.words)
    mismatches = 0
    for src in inputs:
        beam = beam_search(overfit_run.model, overfit_run.vocab, src, beam_size=1)[0]
        greedy = greedy_decode(overfit_run.model, overfit_run.vocab, src)
        mismatches += beam.tokens != greedy.tokens or beam.ext_ids != greedy.ext_ids

    vocab = Vocabulary(["a", "b", "c"])
    exhaustive_ok, cases = True, 0
    for seed, src in [(8, ["b", "Zyx"]), (9, ["a"]), (10, ["c", "a", "Qq"])]:
        model = CopyTransformer(tiny_config(len(vocab)), seed=seed, dtype=np.float64)
        model.copy_attn.w_bal.data[:] = np.random.default_rng(seed).standard_normal(8)
        for max_len in range(1, EXHAUSTIVE_MAX_LEN + 1):
            oracle, ext_size = exhaustive_search(model, vocab, src, max_len)
            found = beam_search(model, vocab, src, beam_size=ext_size**max_len, max_len=max_len)
            cases += 1
            exhaustive_ok &= found[0].ext_ids == oracle[0][1] and abs(found[0].normalized_score - oracle[0][0]) < 1e-9
    ok = mismatches == 0 and len(inputs) == BEAM_GREEDY_INPUTS and exhaustive_ok
    verdict(10, ok, f"beam-1 vs greedy mismatches {mismatches}/{len(inputs)}; exhaustive agreement on {cases} cases: {exhaustive_ok}")
    assert ok


def test_criterion_11_determinism(verdict, tmp_path):
    write_toy_corpus(tmp_path)
    first, _ = run_pipeline(tmp_path)
    second, _ = run_pipeline(tmp_path)
    differing = [name for name in first if first[name] != second[name]]
    ok = not differing
    verdict(11, ok, f"{len(first)} manifests byte-identical across two runs" if ok else f"differ: {differing}")
    assert ok
