"""Training objectives.

* edit-weighted cross-entropy over the mixed distribution,
* token-level right/wrong labelling of the encoder states,
* construction of sentence-level copying batches (identity pairs whose
  encoder-decoder attention is removed),
* the weighted sum used for optimisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .alignment import token_labels
from .autodiff import Tensor
from .copying import gold_probability
from .corpus import Batch, SentencePair

PROB_FLOOR = 1e-12

LAMBDA_PRETRAIN = 3.0
LAMBDA_FINETUNE = 1.8


class ConfigurationError(ValueError):
    """Invalid objective or batch-construction settings."""


@dataclass
class EditWeights:
    """Per-target-position loss weights: ``lam`` where changed, else 1."""

    lam: float
    changed_mask: np.ndarray

    def __post_init__(self):
        if self.lam < 1.0:
            raise ConfigurationError(f"edit weight lambda must be >= 1, got {self.lam}")
        self.changed_mask = np.asarray(self.changed_mask, dtype=bool)

    def weights(self, dtype=np.float64) -> np.ndarray:
        return np.where(self.changed_mask, self.lam, 1.0).astype(dtype)


@dataclass
class SeqLoss:
    total: Tensor  # summed weighted loss, for backward
    tokens: int
    clamped: int = 0  # gold tokens whose mixed probability hit the floor

    @property
    def per_token(self) -> float:
        return float(self.total.data) / max(self.tokens, 1)


def seq_loss(gold_probs: Tensor, weights: np.ndarray | EditWeights | None = None, pad_mask: np.ndarray | None = None) -> SeqLoss:
    """-sum_t w_t log p_t(y_t) over unpadded positions.

    ``gold_probs`` holds the mixed probability of each gold token. A zero
    probability is clamped to ``log(1e-12)`` and counted in ``clamped``.
    """
    p = gold_probs.data
    if isinstance(weights, EditWeights):
        w = weights.weights(p.dtype)
    elif weights is None:
        w = np.ones(p.shape, dtype=p.dtype)
    else:
        w = np.asarray(weights, dtype=p.dtype)
    valid = np.ones(p.shape, dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    w = w * valid
    clamped = int(((p <= PROB_FLOOR) & valid).sum())
    logp = ad.log(ad.clamp_min(gold_probs, PROB_FLOOR))
    total = -(logp * w).sum()
    return SeqLoss(total, int(valid.sum()), clamped)


def align_labels(pair: SentencePair) -> tuple[list[bool], list[bool]]:
    """Right/wrong flag per source token and changed flag per target token."""
    if not pair.src_tokens or not pair.trg_tokens:
        raise ValueError("align_labels needs non-empty source and target")
    right, changed = token_labels(pair.src_tokens, pair.trg_tokens)
    pair.labels, pair.changed_mask = right, changed
    return right, changed


def label_loss(logits: Tensor, labels: np.ndarray, pad_mask: np.ndarray | None = None) -> Tensor:
    """Mean 2-class cross-entropy over unpadded source positions.

    ``logits`` are the affine outputs ``[B, N, 2]``; ``labels`` is ``[B, N]``
    with 1 for a wrong token.
    """
    labels = np.asarray(labels, dtype=np.int64)
    valid = np.ones(labels.shape, dtype=bool) if pad_mask is None else ~np.asarray(pad_mask, dtype=bool)
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.gather(logp, labels[..., None], axis=-1).reshape(labels.shape)
    return -(picked * valid.astype(logits.dtype)).sum() * (1.0 / max(int(valid.sum()), 1))


def total_loss(seq: Tensor, label: Tensor | None = None, seq_weight: float = 1.0, label_weight: float = 1.0) -> Tensor:
    if seq_weight < 0 or label_weight < 0:
        raise ConfigurationError("task weights must be non-negative")
    out = seq * seq_weight
    if label is not None and label_weight:
        out = out + label * label_weight
    return out


def build_copy_task_batch(
    labeled: Sequence[SentencePair],
    correct_pool: Sequence[Sequence[str]],
    batch_size: int,
    rng: np.random.Generator,
    vocab=None,
) -> list[SentencePair]:
    """Half edited pairs, half identity pairs (a correct sentence mapped to itself).

    Identity pairs carry ``is_identity=True`` so the model drops the
    encoder-decoder attention for them; the copy path stays active.
    """
    if not correct_pool:
        raise ConfigurationError("sentence-level copying task needs a non-empty pool of correct sentences")
    if not labeled:
        raise ConfigurationError("sentence-level copying task needs labelled pairs")
    n_identity = batch_size // 2
    n_edited = batch_size - n_identity
    edited_idx = rng.choice(len(labeled), size=n_edited, replace=len(labeled) < n_edited)
    pool_idx = rng.choice(len(correct_pool), size=n_identity, replace=len(correct_pool) < n_identity)
    out = []
    for e, c in zip(edited_idx, pool_idx):
        out.append(labeled[int(e)])
        out.append(_identity_pair(correct_pool[int(c)], vocab))
    for e in edited_idx[len(pool_idx):]:
        out.append(labeled[int(e)])
    return out


def _identity_pair(tokens: Sequence[str], vocab) -> SentencePair:
    toks = list(tokens)
    ids = vocab.encode(toks) if vocab is not None else []
    return SentencePair(toks, list(toks), ids, list(ids), [True] * len(toks), [False] * len(toks), is_identity=True)


@dataclass
class LossBreakdown:
    total: Tensor
    seq: SeqLoss
    label: Tensor | None
    alpha_mean: float | None = None
    extras: dict = field(default_factory=dict)


def batch_loss(
    model,
    batch: Batch,
    lam: float = 1.0,
    label_weight: float = 1.0,
    use_copy: bool | None = None,
    remove_cross_for_identity: bool = True,
    lm_mode: bool = False,
) -> LossBreakdown:
    """Full training loss of ``model`` on ``batch``.

    The optimised quantity is the per-token mean of the edit-weighted
    sequence loss plus ``label_weight`` times the labelling loss.

    ``lm_mode`` trains the decoder alone as a language model: the
    encoder-decoder attention is removed for every row and only the
    generation distribution is scored.
    """
    use_copy = (model.copy_attn is not None) if use_copy is None else use_copy
    enc = model.encode(batch.src_ids, batch.src_pad)
    if lm_mode:
        keep = np.zeros(batch.size, dtype=bool)
        use_copy = False
    elif remove_cross_for_identity and batch.identity.any():
        keep = ~batch.identity
    else:
        keep = None
    dec = model.decode(batch.trg_in, enc, keep)
    p_gen = model.generation_probs(dec.h)
    alpha_mean = None
    if use_copy:
        c = model.copy_distribution(dec.h, enc)
        gold = gold_probability(p_gen, batch.trg_out, c.p_copy, c.alpha, batch.src_ext, batch.src_pad)
        valid = ~batch.trg_pad
        alpha_mean = float((c.alpha.data * valid).sum() / max(valid.sum(), 1))
    else:
        gold = gold_probability(p_gen, batch.trg_out_vocab)
    weights = EditWeights(lam, batch.changed).weights(p_gen.dtype)
    seq = seq_loss(gold, weights, batch.trg_pad)
    seq_mean = seq.total * (1.0 / max(seq.tokens, 1))
    label = None
    if label_weight and not lm_mode:
        label = label_loss(model.label_logits(enc), batch.labels, batch.src_pad)
    return LossBreakdown(total_loss(seq_mean, label, 1.0, label_weight), seq, label, alpha_mean)

