"""Copy attention over source positions and the mixed output distribution.

At each decoding step the model mixes two distributions:

* ``p_gen`` over the fixed vocabulary (softmax of the tied output projection);
* ``p_copy`` over source positions, from a dedicated single-head attention
  between the decoder state and the encoder states.

The balance ``alpha = sigmoid(w_bal . c_t)`` is computed from the copy
context ``c_t`` (attention-weighted sum of copy values), and the final
probability of a surface token ``w`` is::

    (1 - alpha) * p_gen[w] + alpha * sum(p_copy[i] for i where src[i] == w)

Source tokens outside the fixed vocabulary are scoreable through the copy
term alone, so the effective vocabulary is extended by the source sentence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import UNK_ID, Vocabulary, extend_source
from .nn import Module, parameter, xavier_uniform

BALANCE_WEIGHTINGS = ("normalized", "raw")


class CopyAttention(Module):
    """Projections for the copy path; never shared with the encoder-decoder attention."""

    def __init__(self, d_model: int, rng: np.random.Generator, dtype=np.float64, balance_weighting: str = "normalized"):
        if balance_weighting not in BALANCE_WEIGHTINGS:
            raise ValueError(f"balance_weighting must be one of {BALANCE_WEIGHTINGS}, got {balance_weighting!r}")
        self.W_q = parameter(xavier_uniform(rng, d_model, d_model, dtype))
        self.W_k = parameter(xavier_uniform(rng, d_model, d_model, dtype))
        self.W_v = parameter(xavier_uniform(rng, d_model, d_model, dtype))
        self.w_bal = parameter(np.zeros(d_model, dtype=dtype))
        self.d_model = d_model
        self.balance_weighting = balance_weighting


@dataclass
class CopyOutput:
    scores: Tensor  # [..., T, N] scaled q.k scores, padded keys masked
    p_copy: Tensor  # [..., T, N]
    values: Tensor  # [..., N, d]
    alpha: Tensor  # [..., T]


def copy_scores(h: Tensor, H_src: Tensor, pad_mask: np.ndarray | None, copy_attn: CopyAttention) -> tuple[Tensor, Tensor, Tensor]:
    """Scaled dot-product scores of ``h`` against the source and their softmax.

    ``h`` is ``[B, T, d]`` (or ``[B, d]``), ``H_src`` is ``[B, N, d]`` and
    ``pad_mask`` is ``[B, N]`` with True at padding. Returns
    ``(scores, p_copy, values)``.
    """
    squeeze = h.ndim == 2
    if squeeze:
        h = h.reshape(h.shape[0], 1, h.shape[1])
    if H_src.shape[1] == 0:
        raise ValueError("copy attention over an empty source")
    if pad_mask is not None:
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if pad_mask.all(axis=-1).any():
            raise ValueError("copy attention: every source position is padding")
    q = h @ copy_attn.W_q
    K = H_src @ copy_attn.W_k
    V = H_src @ copy_attn.W_v
    scores = (q @ K.transpose(0, 2, 1)) * (1.0 / math.sqrt(copy_attn.d_model))
    if pad_mask is not None:
        scores = ad.masked_fill(scores, pad_mask[:, None, :])
    p_copy = ad.softmax(scores, axis=-1)
    if squeeze:
        scores = scores.reshape(scores.shape[0], scores.shape[2])
        p_copy = p_copy.reshape(p_copy.shape[0], p_copy.shape[2])
    return scores, p_copy, V


def balance_factor(weights: Tensor, V: Tensor, copy_attn: CopyAttention, pad_mask: np.ndarray | None = None) -> Tensor:
    """sigmoid(w_bal . sum_i weights_i v_i) per decoder position.

    ``weights`` is either ``p_copy`` (normalised weighting) or the raw scores
    (``balance_weighting="raw"``); raw scores at padded keys are zeroed.
    """
    squeeze = weights.ndim == 2
    if squeeze:
        weights = weights.reshape(weights.shape[0], 1, weights.shape[1])
    if copy_attn.balance_weighting == "raw" and pad_mask is not None:
        weights = weights * (~np.asarray(pad_mask, dtype=bool))[:, None, :]
    context = weights @ V  # [B, T, d]
    alpha = ad.sigmoid(context @ copy_attn.w_bal)  # [B, T]
    if squeeze:
        alpha = alpha.reshape(alpha.shape[0])
    return alpha


def copy_forward(h: Tensor, H_src: Tensor, pad_mask: np.ndarray | None, copy_attn: CopyAttention) -> CopyOutput:
    scores, p_copy, V = copy_scores(h, H_src, pad_mask, copy_attn)
    weights = p_copy if copy_attn.balance_weighting == "normalized" else scores
    alpha = balance_factor(weights, V, copy_attn, pad_mask)
    return CopyOutput(scores=scores, p_copy=p_copy, values=V, alpha=alpha)


def gold_probability(
    p_gen: Tensor,
    gold_ext: np.ndarray,
    p_copy: Tensor | None = None,
    alpha: Tensor | None = None,
    src_ext: np.ndarray | None = None,
    src_pad: np.ndarray | None = None,
) -> Tensor:
    """Mixed probability of each gold token, differentiable in both branches.

    ``gold_ext`` holds extended ids (``>= |V|`` for source-only OOV tokens,
    which receive no generation mass). Without a copy branch this is just
    ``p_gen`` at the gold id.
    """
    V = p_gen.shape[-1]
    gold_ext = np.asarray(gold_ext)
    in_vocab = gold_ext < V
    gen_idx = np.where(in_vocab, gold_ext, UNK_ID)[..., None]
    gen = ad.gather(p_gen, gen_idx, axis=-1).reshape(gold_ext.shape) * in_vocab.astype(p_gen.dtype)
    if p_copy is None:
        return gen
    match = src_ext[:, None, :] == gold_ext[:, :, None]
    if src_pad is not None:
        match &= ~src_pad[:, None, :]
    copied = (p_copy * match.astype(p_copy.dtype)).sum(axis=-1)
    return (1.0 - alpha) * gen + alpha * copied


@dataclass
class MixedDistribution:
    """One decoding step's distribution over the extended vocabulary."""

    p_gen: np.ndarray  # [|V|]
    p_copy: np.ndarray  # [N]
    alpha: float
    src_tokens: Sequence[str]
    vocab: Vocabulary

    def __post_init__(self):
        self.src_ext, self.oov_tokens = extend_source(self.src_tokens, self.vocab)
        if len(self.src_ext) != len(self.p_copy):
            raise ValueError(f"p_copy has {len(self.p_copy)} entries for {len(self.src_ext)} source tokens")

    @property
    def size(self) -> int:
        return len(self.vocab) + len(self.oov_tokens)

    def ext_token(self, ext_id: int) -> str:
        V = len(self.vocab)
        return self.vocab.token(ext_id) if ext_id < V else self.oov_tokens[ext_id - V]

    def ext_id(self, token: str) -> int | None:
        if token in self.vocab.stoi:
            return self.vocab.stoi[token]
        if token in self.oov_tokens:
            return len(self.vocab) + self.oov_tokens.index(token)
        return None

    def dense(self) -> np.ndarray:
        return mix(self.p_gen, self.p_copy, self.alpha, self.src_ext, len(self.oov_tokens))

    def prob(self, token: str) -> float:
        """Mixed probability of a surface token (0 for tokens outside the extended vocabulary)."""
        ext = self.ext_id(token)
        if ext is None:
            return 0.0
        V = len(self.vocab)
        gen = (1.0 - self.alpha) * float(self.p_gen[ext]) if ext < V else 0.0
        copied = sum(float(p) for p, e in zip(self.p_copy, self.src_ext) if e == ext)
        return gen + self.alpha * copied


def mix(p_gen: np.ndarray, p_copy: np.ndarray, alpha, src_ext: np.ndarray, n_oov: int) -> np.ndarray:
    """Dense mixed distribution over ``|V| + n_oov`` extended ids.

    Works on a single step (``p_gen [V]``, ``p_copy [N]``, scalar alpha) or a
    batch of steps sharing one source (``p_gen [K, V]``, ``p_copy [K, N]``,
    ``alpha [K]``).
    """
    p_gen = np.asarray(p_gen)
    p_copy = np.asarray(p_copy)
    alpha = np.asarray(alpha, dtype=p_gen.dtype)
    V = p_gen.shape[-1]
    out = np.zeros(p_gen.shape[:-1] + (V + n_oov,), dtype=p_gen.dtype)
    out[..., :V] = (1.0 - alpha)[..., None] * p_gen if alpha.ndim else (1.0 - alpha) * p_gen
    scaled = alpha[..., None] * p_copy if alpha.ndim else alpha * p_copy
    src_ext = np.asarray(src_ext, dtype=np.int64)
    if out.ndim == 1:
        np.add.at(out, src_ext, scaled)
    else:
        for j, e in enumerate(src_ext):
            out[..., e] += scaled[..., j]
    return out


def surface_tokens(ext_ids: Sequence[int], vocab: Vocabulary, oov_tokens: Sequence[str]) -> list[str]:
    V = len(vocab)
    return [vocab.token(i) if i < V else oov_tokens[i - V] for i in ext_ids]


__all__ = [
    "CopyAttention",
    "CopyOutput",
    "MixedDistribution",
    "balance_factor",
    "copy_forward",
    "copy_scores",
    "gold_probability",
    "mix",
    "surface_tokens",
]
