"""Vocabulary, parallel-corpus I/O, filtering and batching.

Text is pre-tokenised and split on whitespace. Parallel files hold one pair
per line as ``source<TAB>target``; single-column lines are identity pairs.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .alignment import token_labels

logger = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = 0, 1, 2, 3

DEFAULT_VOCAB_CAP = 50_000


class CorpusError(Exception):
    """Malformed or unreadable corpus input."""


def tokenize(line: str) -> list[str]:
    return line.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """Bidirectional token/id map. Ids 0-3 are reserved for pad, unk, bos, eos."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {tok: i for i, tok in enumerate(SPECIALS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def is_oov(self, token: str) -> bool:
        return token not in self.stoi

    @property
    def regular_tokens(self) -> list[str]:
        """Every non-special token, in id order."""
        return self.itos[len(SPECIALS):]

    def save(self, path: str | Path) -> None:
        text = "".join(tok + "\n" for tok in self.regular_tokens)
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CorpusError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls(line.strip() for line in lines if line.strip())


def build_vocab(sentences: Iterable[Sequence[str]], cap: int = DEFAULT_VOCAB_CAP) -> Vocabulary:
    """Keep the ``cap`` most frequent tokens; ties are broken lexicographically."""
    counts: Counter[str] = Counter()
    seen_any = False
    for sent in sentences:
        seen_any = True
        counts.update(t for t in sent if t not in SPECIALS)
    if not seen_any or not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, _ in ranked[:cap])


@dataclass
class SentencePair:
    src_tokens: list[str]
    trg_tokens: list[str]
    src_ids: list[int] = field(default_factory=list)
    trg_ids: list[int] = field(default_factory=list)
    labels: list[bool] | None = None  # True = source token is right
    changed_mask: list[bool] | None = None
    is_identity: bool = False

    @classmethod
    def from_tokens(cls, src: Sequence[str], trg: Sequence[str], vocab: Vocabulary, is_identity: bool = False):
        return cls(list(src), list(trg), vocab.encode(src), vocab.encode(trg), is_identity=is_identity)

    def with_labels(self) -> "SentencePair":
        if self.labels is None or self.changed_mask is None:
            self.labels, self.changed_mask = token_labels(self.src_tokens, self.trg_tokens)
        return self

    @property
    def unchanged(self) -> bool:
        return self.src_tokens == self.trg_tokens


def read_parallel(path: str | Path) -> list[tuple[list[str], list[str]]]:
    """Read ``src<TAB>trg`` lines. Single-column lines map a sentence to itself."""
    pairs = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                cols = line.split("\t")
                if len(cols) == 1:
                    toks = tokenize(cols[0])
                    pairs.append((toks, list(toks)))
                elif len(cols) == 2:
                    pairs.append((tokenize(cols[0]), tokenize(cols[1])))
                else:
                    raise CorpusError(f"{path}:{lineno}: expected 1 or 2 tab-separated columns, got {len(cols)}")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise CorpusError(f"{path}: not valid UTF-8 ({exc})") from exc
    return pairs


def read_sentences(path: str | Path) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_number, tokens)`` for each non-empty line."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid UTF-8 ({exc.reason})") from exc
            toks = tokenize(line)
            if toks:
                yield lineno, toks


def write_parallel(path: str | Path, pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for src, trg in pairs:
            fh.write(f"{detokenize(src)}\t{detokenize(trg)}\n")


def filter_unchanged(pairs: Iterable[SentencePair]) -> tuple[list[SentencePair], int]:
    """Drop pairs whose source equals the target; return the kept pairs and drop count."""
    kept, dropped = [], 0
    for p in pairs:
        if p.unchanged:
            dropped += 1
        else:
            kept.append(p)
    return kept, dropped


def pair_size(pair: SentencePair) -> int:
    # +1 for eos (target) / decoder bos (input)
    return max(len(pair.src_tokens), len(pair.trg_tokens) + 1)


def make_batches(pairs: Sequence[SentencePair], max_tokens: int) -> list[list[SentencePair]]:
    """Group pairs of similar length so that ``batch_size * longest <= max_tokens``.

    Pairs longer than the budget are skipped with a warning.
    """
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i].src_tokens), len(pairs[i].trg_tokens), i))
    batches: list[list[SentencePair]] = []
    current: list[SentencePair] = []
    longest = 0
    for i in order:
        pair = pairs[i]
        size = pair_size(pair)
        if size > max_tokens:
            logger.warning("skipping pair %d: %d tokens exceed the %d-token budget", i, size, max_tokens)
            continue
        new_longest = max(longest, size)
        if current and new_longest * (len(current) + 1) > max_tokens:
            batches.append(current)
            current, new_longest = [], size
        current.append(pair)
        longest = new_longest
    if current:
        batches.append(current)
    return batches


@dataclass
class Batch:
    """Padded id arrays for one training or decoding batch.

    Extended ids: an in-vocabulary token keeps its vocabulary id; the k-th
    distinct out-of-vocabulary source token of a sentence gets ``|V| + k``.
    Padding masks are True at padded positions.
    """

    src_ids: np.ndarray  # [B, N], OOV -> unk
    src_ext: np.ndarray  # [B, N] extended ids
    src_pad: np.ndarray  # [B, N] bool
    trg_in: np.ndarray  # [B, T] bos + target, OOV -> unk
    trg_out: np.ndarray  # [B, T] target + eos, extended ids (OOV not in source -> unk)
    trg_out_vocab: np.ndarray  # [B, T] target + eos, OOV -> unk
    trg_pad: np.ndarray  # [B, T] bool
    changed: np.ndarray  # [B, T] bool
    labels: np.ndarray  # [B, N] int, 1 = wrong
    identity: np.ndarray  # [B] bool
    oov_tokens: list[list[str]]
    src_tokens: list[list[str]]

    @property
    def size(self) -> int:
        return self.src_ids.shape[0]

    @property
    def num_target_tokens(self) -> int:
        return int((~self.trg_pad).sum())


def extend_source(src_tokens: Sequence[str], vocab: Vocabulary) -> tuple[list[int], list[str]]:
    """Extended ids of a source sentence and its list of distinct OOV tokens."""
    oov: list[str] = []
    ext = []
    for tok in src_tokens:
        if tok in vocab.stoi:
            ext.append(vocab.stoi[tok])
        else:
            if tok not in oov:
                oov.append(tok)
            ext.append(len(vocab) + oov.index(tok))
    return ext, oov


def collate(pairs: Sequence[SentencePair], vocab: Vocabulary) -> Batch:
    """Pad a list of pairs into a :class:`Batch` (computes labels when missing)."""
    if not pairs:
        raise ValueError("cannot collate an empty batch")
    B = len(pairs)
    N = max(len(p.src_tokens) for p in pairs)
    T = max(len(p.trg_tokens) for p in pairs) + 1
    V = len(vocab)
    src_ids = np.full((B, N), PAD_ID, dtype=np.int64)
    src_ext = np.full((B, N), PAD_ID, dtype=np.int64)
    src_pad = np.ones((B, N), dtype=bool)
    trg_in = np.full((B, T), PAD_ID, dtype=np.int64)
    trg_out = np.full((B, T), PAD_ID, dtype=np.int64)
    trg_out_vocab = np.full((B, T), PAD_ID, dtype=np.int64)
    trg_pad = np.ones((B, T), dtype=bool)
    changed = np.zeros((B, T), dtype=bool)
    labels = np.zeros((B, N), dtype=np.int64)
    identity = np.zeros(B, dtype=bool)
    oov_lists = []
    for b, pair in enumerate(pairs):
        if not pair.src_tokens:
            raise ValueError("empty source sentence")
        pair.with_labels()
        n, t = len(pair.src_tokens), len(pair.trg_tokens)
        ext, oov = extend_source(pair.src_tokens, vocab)
        oov_lists.append(oov)
        src_ids[b, :n] = vocab.encode(pair.src_tokens)
        src_ext[b, :n] = ext
        src_pad[b, :n] = False
        trg_vocab_ids = vocab.encode(pair.trg_tokens)
        trg_in[b, : t + 1] = [BOS_ID] + trg_vocab_ids
        trg_out_vocab[b, : t + 1] = trg_vocab_ids + [EOS_ID]
        gold = []
        for tok, vid in zip(pair.trg_tokens, trg_vocab_ids):
            if vid == UNK_ID and tok in oov:
                gold.append(V + oov.index(tok))
            else:
                gold.append(vid)
        trg_out[b, : t + 1] = gold + [EOS_ID]
        trg_pad[b, : t + 1] = False
        changed[b, :t] = pair.changed_mask
        labels[b, :n] = [0 if r else 1 for r in pair.labels]
        identity[b] = pair.is_identity
    return Batch(
        src_ids=src_ids,
        src_ext=src_ext,
        src_pad=src_pad,
        trg_in=trg_in,
        trg_out=trg_out,
        trg_out_vocab=trg_out_vocab,
        trg_pad=trg_pad,
        changed=changed,
        labels=labels,
        identity=identity,
        oov_tokens=oov_lists,
        src_tokens=[list(p.src_tokens) for p in pairs],
    )
