"""Toy corpora for desk-scale experiments.

The clean "language" is a set of ascending runs over a numbered lexicon
(``w07 w08 w09 ...``): every sentence is fully predictable from its first
token and its length, so corruption is detectable and fixable by a small
model. Errorful sentences come from :func:`copygec.noising.corrupt`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .corpus import SentencePair, Vocabulary, build_vocab
from .noising import NoiseConfig, corrupt, sentence_rng


def lexicon(size: int, prefix: str = "w") -> list[str]:
    width = len(str(size - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(size)]


def run_sentences(rng: np.random.Generator, count: int, words: Sequence[str], min_len: int = 5, max_len: int = 9) -> list[list[str]]:
    """``count`` runs of consecutive lexicon entries with random start and length."""
    out = []
    for _ in range(count):
        n = int(rng.integers(min_len, max_len + 1))
        start = int(rng.integers(0, len(words) - n + 1))
        out.append(list(words[start : start + n]))
    return out


def noised_pairs(
    sentences: Sequence[Sequence[str]],
    cfg: NoiseConfig,
    vocab_tokens: Sequence[str],
    start_index: int = 0,
    min_changes: int = 0,
) -> list[tuple[list[str], list[str]]]:
    """``(corrupted, clean)`` pairs; with ``min_changes=1`` unchanged corruptions are redrawn."""
    pairs = []
    for k, sent in enumerate(sentences, start_index):
        rng = sentence_rng(cfg.rng_seed, k)
        noisy = corrupt(sent, cfg, rng, vocab_tokens)
        tries = 0
        while min_changes and noisy == list(sent) and tries < 100:
            noisy = corrupt(sent, cfg, rng, vocab_tokens)
            tries += 1
        if not noisy:
            noisy = list(sent)
        pairs.append((noisy, list(sent)))
    return pairs


def to_pairs(raw: Sequence[tuple[Sequence[str], Sequence[str]]], vocab: Vocabulary) -> list[SentencePair]:
    return [SentencePair.from_tokens(s, t, vocab).with_labels() for s, t in raw]


def oov_task(
    seed: int,
    count: int = 200,
    n_words: int = 40,
    n_names: int = 400,
    oov_rate: float = 0.10,
    min_len: int = 8,
    max_len: int = 12,
) -> tuple[list[tuple[list[str], list[str]]], list[str], list[str]]:
    """Run sentences where ~``oov_rate`` of target tokens are rare names.

    A name replaces one word of the run and is kept verbatim in the target;
    the error to fix is one substituted in-vocabulary word. Names are drawn
    from a pool far larger than what any vocabulary built from the training
    split can hold, so they are out-of-vocabulary at test time.
    Returns ``(pairs, lexicon_words, name_pool)``.
    """
    rng = np.random.default_rng(seed)
    words = lexicon(n_words)
    names = [f"Name{chr(65 + i % 26)}{i:03d}" for i in range(n_names)]
    pairs = []
    for _ in range(count):
        clean = run_sentences(rng, 1, words, min_len, max_len)[0]
        n_oov = max(1, int(round(oov_rate * len(clean))))
        slots = rng.choice(len(clean), size=n_oov, replace=False)
        for s in slots:
            clean[int(s)] = names[int(rng.integers(0, n_names))]
        noisy = list(clean)
        candidates = [i for i in range(len(clean)) if clean[i] in words]
        if candidates:
            i = candidates[int(rng.integers(0, len(candidates)))]
            noisy[i] = words[int(rng.integers(0, n_words))]
            while noisy[i] == clean[i]:
                noisy[i] = words[int(rng.integers(0, n_words))]
        pairs.append((noisy, clean))
    return pairs, words, names


def vocab_for(sentences: Sequence[Sequence[str]], cap: int = 50_000) -> Vocabulary:
    return build_vocab(sentences, cap)
