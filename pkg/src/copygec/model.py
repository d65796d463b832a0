"""Post-norm Transformer encoder-decoder with tied embeddings and a copy head."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .copying import CopyAttention, CopyOutput, copy_forward
from .nn import Dropout, LayerNorm, Linear, Module, parameter


class VocabularyError(IndexError):
    """A token id outside ``[0, vocab_size)``."""


class CapacityError(ValueError):
    """A sequence longer than ``max_positions``."""


@dataclass
class ModelConfig:
    d_model: int = 512
    n_layers: int = 6
    n_heads: int = 8
    d_ffn: int = 4096
    dropout: float = 0.2
    vocab_size: int = 50_000
    max_positions: int = 1024
    tie_embeddings: bool = True
    copy: bool = True
    balance_weighting: str = "normalized"

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.vocab_size < 4:
            raise ValueError("vocab_size must leave room for the 4 special tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        """Small configuration used for tests and toy experiments."""
        base = dict(d_model=64, n_layers=2, n_heads=2, d_ffn=128, vocab_size=200, max_positions=256)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def sinusoidal_positions(n: int, d: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng, dtype=np.float64):
        if d_model % n_heads:
            raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q = Linear(d_model, d_model, rng, dtype)
        self.k = Linear(d_model, d_model, rng, dtype)
        self.v = Linear(d_model, d_model, rng, dtype)
        self.o = Linear(d_model, d_model, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        B, T, _ = x.shape
        return x.reshape(B, T, self.n_heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(self, query: Tensor, key_source: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Attend from ``query [B, Tq, d]`` over ``key_source [B, Tk, d]``.

        ``mask`` broadcasts to ``[B, Tq, Tk]`` and is True where attention is
        not allowed. Returns the projected context and the per-head weights
        ``[B, heads, Tq, Tk]``.
        """
        B, Tq, d = query.shape
        Tk = key_source.shape[1]
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), (B, Tq, Tk))
            if mask.all(axis=-1).any():
                raise ValueError("attention row with every key masked")
        q = self._split(self.q(query))
        k = self._split(self.k(key_source))
        v = self._split(self.v(key_source))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d_head))
        if mask is not None:
            scores = ad.masked_fill(scores, mask[:, None, :, :])
        weights = ad.softmax(scores, axis=-1)
        context = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Tq, d)
        return self.o(context), weights


class FeedForward(Module):
    def __init__(self, d_model: int, d_ffn: int, rng, dtype=np.float64):
        self.fc1 = Linear(d_model, d_ffn, rng, dtype)
        self.fc2 = Linear(d_ffn, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))


class EncoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, x: Tensor, key_pad: np.ndarray) -> Tensor:
        attn, _ = self.self_attn(x, x, key_pad[:, None, :])
        x = self.ln1(x + self.drop(attn))
        return self.ln2(x + self.drop(self.ffn(x)))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng, dtype)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng, dtype)
        self.ln1 = LayerNorm(cfg.d_model, dtype)
        self.ln2 = LayerNorm(cfg.d_model, dtype)
        self.ln3 = LayerNorm(cfg.d_model, dtype)
        self.drop = Dropout(cfg.dropout, rng)

    def __call__(self, y: Tensor, H_src: Tensor, causal: np.ndarray, src_pad: np.ndarray, cross_keep: np.ndarray | None):
        attn, _ = self.self_attn(y, y, causal)
        y = self.ln1(y + self.drop(attn))
        if cross_keep is not None and not cross_keep.any():
            cross, weights = None, None
        else:
            cross, weights = self.cross_attn(y, H_src, src_pad[:, None, :])
            if cross_keep is not None:
                # rows with keep=0 lose the encoder-decoder attention entirely
                cross = cross * cross_keep.astype(y.dtype)[:, None, None]
        if cross is not None:
            y = self.ln2(y + self.drop(cross))
        else:
            y = self.ln2(y)
        return self.ln3(y + self.drop(self.ffn(y))), weights


@dataclass
class EncoderStates:
    H_src: Tensor  # [B, N, d]
    pad_mask: np.ndarray  # [B, N], True at padding


@dataclass
class DecoderOutput:
    h: Tensor  # [B, T, d] final decoder states
    cross_weights: np.ndarray | None  # [B, T, N] last-layer encoder-decoder attention, head-averaged


@dataclass
class StepOutput:
    h_t: Tensor  # [B, d]
    p_gen: Tensor  # [B, V]
    p_copy: Tensor | None  # [B, N]
    alpha: Tensor | None  # [B]
    cross_weights: np.ndarray | None  # [B, N]


class CopyTransformer(Module):
    """Encoder-decoder with one embedding matrix shared by encoder input,
    decoder input and the output projection, plus an optional copy head and a
    token-level right/wrong classifier on the encoder states."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d, V = config.d_model, config.vocab_size
        self.embed = parameter(rng.uniform(-0.1, 0.1, size=(V, d)).astype(dtype))
        if not config.tie_embeddings:
            self.trg_embed = parameter(rng.uniform(-0.1, 0.1, size=(V, d)).astype(dtype))
            self.out_embed = parameter(rng.uniform(-0.1, 0.1, size=(V, d)).astype(dtype))
        self.encoder = [EncoderLayer(config, rng, dtype) for _ in range(config.n_layers)]
        self.decoder = [DecoderLayer(config, rng, dtype) for _ in range(config.n_layers)]
        self.copy_attn = CopyAttention(d, rng, dtype, config.balance_weighting) if config.copy else None
        self.label_head = Linear(d, 2, rng, dtype)
        self.embed_drop = Dropout(config.dropout, rng)
        self.dropout_rng = rng
        self._positions = sinusoidal_positions(config.max_positions, d, dtype)

    # -- embeddings ---------------------------------------------------------------
    @property
    def src_embedding(self) -> Tensor:
        return self.embed

    @property
    def trg_embedding(self) -> Tensor:
        return self.embed if self.config.tie_embeddings else self.trg_embed

    @property
    def output_embedding(self) -> Tensor:
        return self.embed if self.config.tie_embeddings else self.out_embed

    def reseed_dropout(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        self.dropout_rng = rng
        for m in self._dropouts():
            m.rng = rng

    def _dropouts(self):
        yield self.embed_drop
        for layer in self.encoder + self.decoder:
            yield layer.drop

    def _check_ids(self, ids: np.ndarray) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabularyError(f"token id outside [0, {self.config.vocab_size})")
        if ids.shape[-1] > self.config.max_positions:
            raise CapacityError(f"sequence length {ids.shape[-1]} exceeds max_positions={self.config.max_positions}")

    def _embed(self, table: Tensor, ids: np.ndarray) -> Tensor:
        x = ad.embedding(table, ids) * math.sqrt(self.config.d_model)
        x = x + self._positions[: ids.shape[1]]
        return self.embed_drop(x)

    # -- forward pieces ------------------------------------------------------------
    def encode(self, src_ids, pad_mask=None) -> EncoderStates:
        src_ids = np.atleast_2d(np.asarray(src_ids, dtype=np.int64))
        self._check_ids(src_ids)
        pad = np.zeros(src_ids.shape, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool)
        x = self._embed(self.src_embedding, src_ids)
        for layer in self.encoder:
            x = layer(x, pad)
        return EncoderStates(x, pad)

    def decode(self, trg_in, enc: EncoderStates, cross_keep=None) -> DecoderOutput:
        """Teacher-forced decoder states for every prefix of ``trg_in``.

        ``cross_keep`` (``[B]`` bool) switches off the encoder-decoder
        attention for rows where it is False.
        """
        trg_in = np.atleast_2d(np.asarray(trg_in, dtype=np.int64))
        if trg_in.shape[1] == 0:
            raise ValueError("decoder prefix is empty; it must start with the bos id")
        self._check_ids(trg_in)
        T = trg_in.shape[1]
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)[None]
        keep = None if cross_keep is None else np.asarray(cross_keep, dtype=bool)
        y = self._embed(self.trg_embedding, trg_in)
        weights = None
        for layer in self.decoder:
            y, weights = layer(y, enc.H_src, causal, enc.pad_mask, keep)
        cross = None if weights is None else weights.data.mean(axis=1)
        return DecoderOutput(y, cross)

    def generation_logits(self, h: Tensor) -> Tensor:
        return h @ self.output_embedding.T

    def generation_probs(self, h: Tensor) -> Tensor:
        return ad.softmax(self.generation_logits(h), axis=-1)

    def copy_distribution(self, h: Tensor, enc: EncoderStates) -> CopyOutput:
        if self.copy_attn is None:
            raise RuntimeError("model was built without the copy mechanism")
        return copy_forward(h, enc.H_src, enc.pad_mask, self.copy_attn)

    def label_logits(self, enc: EncoderStates) -> Tensor:
        return self.label_head(enc.H_src)

    def decode_step(self, trg_prefix_ids, enc: EncoderStates, cross_keep=None) -> StepOutput:
        """Distributions for the token following each prefix (``[B, t]`` ids)."""
        prefix = np.atleast_2d(np.asarray(trg_prefix_ids, dtype=np.int64))
        if prefix.shape[1] == 0:
            raise ValueError("decoder prefix is empty; it must start with the bos id")
        out = self.decode(prefix, enc, cross_keep)
        B, T, d = out.h.shape
        h_t = out.h[:, T - 1, :]
        p_gen = self.generation_probs(h_t)
        p_copy = alpha = None
        if self.copy_attn is not None:
            c = self.copy_distribution(h_t, enc)
            p_copy, alpha = c.p_copy, c.alpha
        cross = None if out.cross_weights is None else out.cross_weights[:, -1, :]
        return StepOutput(h_t, p_gen, p_copy, alpha, cross)

    # -- bookkeeping ---------------------------------------------------------------
    def decoder_parameter_names(self) -> list[str]:
        """Parameters initialised from a decoder language model: decoder
        self-attention, feed-forward and norms, plus the (tied) embeddings."""
        names = []
        for name, _ in self.named_parameters():
            if name.startswith("decoder.") and ".cross_attn." not in name:
                names.append(name)
            elif name in ("embed", "trg_embed", "out_embed"):
                names.append(name)
        return names


def count_parameters(config: ModelConfig) -> int:
    """Parameter count for ``config`` without allocating the weights."""
    d, f, V, L = config.d_model, config.d_ffn, config.vocab_size, config.n_layers
    attn = 4 * (d * d + d)
    ffn = d * f + f + f * d + d
    ln = 2 * d
    enc = L * (attn + ffn + 2 * ln)
    dec = L * (2 * attn + ffn + 3 * ln)
    emb = V * d * (1 if config.tie_embeddings else 3)
    copy = 3 * d * d + d if config.copy else 0
    label = 2 * d + 2
    return emb + enc + dec + copy + label
