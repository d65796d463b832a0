"""Synthetic corruption of clean sentences for denoising pre-training.

Each sentence goes through four independent processes, in this order:

1. every token is deleted with probability ``p_delete``;
2. every gap (both sentence ends included) receives a random vocabulary
   token with probability ``p_insert``;
3. every token is replaced by a random vocabulary token with probability
   ``p_replace``;
4. token ``i`` gets the sort key ``i + Normal(0, shuffle_sigma)`` and the
   sentence is re-sorted by key (stable for ties).

Random tokens are drawn uniformly from the non-special vocabulary.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .alignment import DEL, INS, SUB, align
from .corpus import SPECIALS, CorpusError, read_sentences, write_parallel


class NoiseConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    p_delete: float = 0.10
    p_insert: float = 0.10
    p_replace: float = 0.10
    shuffle_sigma: float = 0.5
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_delete", "p_insert", "p_replace"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise NoiseConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.shuffle_sigma < 0:
            raise NoiseConfigError(f"shuffle_sigma must be >= 0, got {self.shuffle_sigma}")


@dataclass
class NoiseTrace:
    """What :func:`corrupt` did to one sentence."""

    n_clean: int = 0
    deleted: int = 0
    gaps: int = 0
    inserted: int = 0
    replace_trials: int = 0
    replaced: int = 0
    permutation: list[int] = field(default_factory=list)  # output slot -> pre-shuffle index


def sentence_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for sentence ``index``: output never depends on scheduling."""
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]))


def _candidates(vocab_tokens: Sequence[str] | None) -> list[str]:
    return [t for t in (vocab_tokens or []) if t not in SPECIALS]


def corrupt(
    clean: Sequence[str],
    cfg: NoiseConfig,
    rng: np.random.Generator,
    vocab_tokens: Sequence[str] | None = None,
    trace: NoiseTrace | None = None,
) -> list[str]:
    """Corrupted copy of ``clean``; may equal the input."""
    if not clean:
        raise ValueError("cannot corrupt an empty sentence")
    pool = _candidates(vocab_tokens)
    if not pool and (cfg.p_insert > 0 or cfg.p_replace > 0):
        raise NoiseConfigError("insertion/replacement need a non-empty vocabulary")
    tr = trace if trace is not None else NoiseTrace()
    tr.n_clean += len(clean)

    keep = rng.random(len(clean)) >= cfg.p_delete
    tokens = [t for t, k in zip(clean, keep) if k]
    tr.deleted += int((~keep).sum())

    gaps = len(tokens) + 1
    tr.gaps += gaps
    insert_at = rng.random(gaps) < cfg.p_insert
    n_ins = int(insert_at.sum())
    new_words = [pool[i] for i in rng.integers(0, len(pool), size=n_ins)] if n_ins else []
    tr.inserted += n_ins
    out: list[str] = []
    w = iter(new_words)
    for g in range(gaps):
        if insert_at[g]:
            out.append(next(w))
        if g < len(tokens):
            out.append(tokens[g])
    tokens = out

    replace = rng.random(len(tokens)) < cfg.p_replace
    n_rep = int(replace.sum())
    tr.replace_trials += len(tokens)
    tr.replaced += n_rep
    if n_rep:
        picks = iter(rng.integers(0, len(pool), size=n_rep))
        tokens = [pool[next(picks)] if r else t for t, r in zip(tokens, replace)]

    if cfg.shuffle_sigma > 0 and tokens:
        keys = np.arange(len(tokens)) + rng.normal(0.0, cfg.shuffle_sigma, size=len(tokens))
        order = np.argsort(keys, kind="stable")
    else:
        order = np.arange(len(tokens))
    tr.permutation = [int(i) for i in order]
    return [tokens[i] for i in order]


def make_pretrain_corpus(
    sentences: Iterable[Sequence[str]],
    cfg: NoiseConfig,
    vocab_tokens: Sequence[str],
    start_index: int = 0,
) -> Iterator[tuple[list[str], list[str]]]:
    """Yield ``(corrupted, clean)`` pairs; sentence ``k`` uses ``sentence_rng(seed, k)``."""
    for k, sent in enumerate(sentences, start_index):
        yield corrupt(sent, cfg, sentence_rng(cfg.rng_seed, k), vocab_tokens), list(sent)


def noise_file(
    input_path: str | Path,
    output_path: str | Path,
    cfg: NoiseConfig,
    vocab_tokens: Sequence[str],
    trace: NoiseTrace | None = None,
) -> int:
    """Corrupt a one-sentence-per-line file into a ``corrupted<TAB>clean`` file.

    Sentence ``k`` (1-based line number) uses ``sentence_rng(seed, k)``.
    """
    pairs = []
    for lineno, toks in read_sentences(input_path):
        try:
            noisy = corrupt(toks, cfg, sentence_rng(cfg.rng_seed, lineno), vocab_tokens, trace)
        except ValueError as exc:
            raise CorpusError(f"{input_path}:{lineno}: {exc}") from exc
        pairs.append((noisy, toks))
    write_parallel(output_path, pairs)
    return len(pairs)


@dataclass
class NoiseStats:
    sentences: int
    clean_tokens: int
    delete_rate: float
    insert_rate: float
    replace_rate: float
    mean_distance: float
    displacement: dict[int, float]  # |shift| bucket -> fraction of tokens (last bucket is ">= k")


def displacement_histogram(permutations: Iterable[Sequence[int]], max_bucket: int = 3) -> dict[int, float]:
    """Fraction of tokens moved by 0, 1, ..., ``>= max_bucket`` positions."""
    counts: Counter[int] = Counter()
    total = 0
    for perm in permutations:
        for slot, origin in enumerate(perm):
            counts[min(abs(slot - origin), max_bucket)] += 1
            total += 1
    return {k: counts[k] / max(total, 1) for k in range(max_bucket + 1)}


def _recover_permutation(noisy: Sequence[str], clean: Sequence[str]) -> list[int] | None:
    if sorted(noisy) != sorted(clean):
        return None
    used = [False] * len(clean)
    perm = []
    for tok in noisy:
        # first unused occurrence; exact whenever the clean tokens are distinct
        j = next(i for i, t in enumerate(clean) if t == tok and not used[i])
        used[j] = True
        perm.append(j)
    return perm


def audit_noise(pairs: Iterable[tuple[Sequence[str], Sequence[str]]], max_bucket: int = 3) -> NoiseStats:
    """Observed operation rates of ``(corrupted, clean)`` pairs via a minimal edit script.

    Rates are per clean token (delete, replace) and per clean gap (insert).
    The displacement histogram uses only pairs that are pure permutations.
    """
    n = tokens = dels = ins = subs = gaps = dist = 0
    perms = []
    for noisy, clean in pairs:
        n += 1
        tokens += len(clean)
        gaps += len(clean) + 1
        kinds = Counter(op.kind for op in align(clean, noisy))
        dels += kinds[DEL]
        ins += kinds[INS]
        subs += kinds[SUB]
        dist += kinds[DEL] + kinds[INS] + kinds[SUB]
        perm = _recover_permutation(noisy, clean)
        if perm is not None:
            perms.append(perm)
    return NoiseStats(
        sentences=n,
        clean_tokens=tokens,
        delete_rate=dels / max(tokens, 1),
        insert_rate=ins / max(gaps, 1),
        replace_rate=subs / max(tokens, 1),
        mean_distance=dist / max(n, 1),
        displacement=displacement_histogram(perms, max_bucket),
    )
