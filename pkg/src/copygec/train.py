"""Nesterov-momentum training with reduce-on-plateau annealing.

Regimes:

* :func:`pretrain` - denoising auto-encoder on (corrupted -> clean) pairs;
* :func:`pretrain_decoder` - the decoder alone as a language model;
* :func:`finetune` - labelled pairs, initialised randomly, from a decoder LM,
  or from a full denoising checkpoint.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import no_grad
from .checkpoint import Checkpoint, load_parameters, read_checkpoint, save_checkpoint
from .corpus import Batch, SentencePair, Vocabulary, collate, make_batches
from .model import CopyTransformer, ModelConfig
from .objectives import LAMBDA_FINETUNE, LAMBDA_PRETRAIN, ConfigurationError, batch_loss, build_copy_task_batch

logger = logging.getLogger(__name__)

INIT_MODES = ("random", "decoder_only", "full_dae")


@dataclass
class OptimizerConfig:
    lr: float = 0.002
    momentum: float = 0.99
    # multiplicative lr shrink applied when the dev loss stops improving
    lr_shrink: float = 0.5
    min_lr: float = 1e-4
    patience: int = 0
    l2_decay: float = 0.0
    clip_norm: float | None = 5.0


class NAG:
    """Nesterov accelerated gradient, look-ahead form.

    The stored parameters are the look-ahead point ``theta + mu * v``, so the
    gradient passed in is already evaluated there::

        v     <- mu * v - lr * g
        theta <- theta + mu * v - lr * g
    """

    def __init__(self, named_params, cfg: OptimizerConfig):
        self.params = dict(named_params)
        self.cfg = cfg
        self.lr = cfg.lr
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def clip_gradients(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = math.sqrt(total)
        if self.cfg.clip_norm and norm > self.cfg.clip_norm:
            scale = self.cfg.clip_norm / (norm + 1e-12)
            for p in self.params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def step(self) -> None:
        mu, lr = self.cfg.momentum, self.lr
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name} at step {self.step_count}")
            if self.cfg.l2_decay:
                g = g + self.cfg.l2_decay * p.data
            v = self.velocity[name]
            v *= mu
            v -= lr * g
            p.data += mu * v - lr * g
        self.step_count += 1

    def state_dict(self) -> dict:
        return {"lr": self.lr, "step_count": self.step_count, "velocity": {k: v.copy() for k, v in self.velocity.items()}}

    def load_state_dict(self, state: dict) -> None:
        self.lr = float(state["lr"])
        self.step_count = int(state["step_count"])
        for k, v in state["velocity"].items():
            if k in self.velocity:
                self.velocity[k] = np.array(v, dtype=self.velocity[k].dtype)


def nag_step(params: np.ndarray, grads: np.ndarray, velocity: np.ndarray, lr: float, momentum: float):
    """Functional single NAG update on plain arrays; returns ``(params, velocity)``."""
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError("non-finite gradient")
    v = momentum * velocity - lr * grads
    return params + momentum * v - lr * grads, v


def anneal(dev_losses: Sequence[float], lr: float, cfg: OptimizerConfig) -> float:
    """Shrink ``lr`` when the latest dev loss fails to beat the best earlier one
    for more than ``patience`` epochs; never go below ``min_lr``."""
    if not dev_losses:
        raise ValueError("anneal needs at least one completed epoch")
    best_idx = int(np.argmin(dev_losses))
    epochs_since_best = len(dev_losses) - 1 - best_idx
    if len(dev_losses) > 1 and epochs_since_best > cfg.patience:
        lr = lr * cfg.lr_shrink
    return max(lr, cfg.min_lr)


@dataclass
class TrainConfig:
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    lam: float = LAMBDA_FINETUNE
    label_weight: float = 1.0
    copy_task: bool = False
    max_tokens: int = 1024
    max_steps: int | None = None
    max_epochs: int | None = 1
    eval_every: int | None = None  # steps; None = once per pass over the data
    seed: int = 0
    lm_mode: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalRecord:
    step: int
    epoch: int
    lr: float
    train_loss: float
    dev_loss: float | None
    dev_f05: float | None = None

    def to_line(self) -> str:
        parts = [f"step={self.step}", f"epoch={self.epoch}", f"lr={self.lr:.6g}", f"train_loss={self.train_loss:.6f}"]
        parts.append("dev_loss=" + ("nan" if self.dev_loss is None else f"{self.dev_loss:.6f}"))
        parts.append("dev_f05=" + ("nan" if self.dev_f05 is None else f"{self.dev_f05:.4f}"))
        return " ".join(parts)


class Trainer:
    def __init__(
        self,
        model: CopyTransformer,
        vocab: Vocabulary,
        cfg: TrainConfig,
        correct_pool: Sequence[Sequence[str]] | None = None,
        dev_metric: Callable[[CopyTransformer], float] | None = None,
    ):
        if cfg.copy_task and not correct_pool:
            raise ConfigurationError("copy_task needs a pool of correct sentences")
        self.model = model
        self.vocab = vocab
        self.cfg = cfg
        self.optimizer = NAG(model.named_parameters(), cfg.optim)
        self.rng = np.random.default_rng(cfg.seed)
        model.reseed_dropout(cfg.seed + 1)
        self.correct_pool = list(correct_pool or [])
        self.dev_metric = dev_metric
        self.history: list[EvalRecord] = []
        self.dev_losses: list[float] = []
        self.train_losses: list[float] = []
        self.epoch = 0

    @property
    def step_count(self) -> int:
        return self.optimizer.step_count

    def _prepare(self, pairs: list[SentencePair]) -> Batch:
        if self.cfg.copy_task:
            pairs = build_copy_task_batch(pairs, self.correct_pool, 2 * len(pairs), self.rng, self.vocab)
        return collate(pairs, self.vocab)

    def train_step(self, pairs: list[SentencePair]) -> float:
        self.model.train()
        batch = self._prepare(pairs)
        self.optimizer.zero_grad()
        out = batch_loss(self.model, batch, self.cfg.lam, self.cfg.label_weight, lm_mode=self.cfg.lm_mode)
        out.total.backward()
        self.optimizer.clip_gradients()
        self.optimizer.step()
        loss = float(out.total.data)
        self.train_losses.append(loss)
        return loss

    def dev_loss(self, pairs: Sequence[SentencePair]) -> float:
        return evaluate_loss(self.model, self.vocab, pairs, self.cfg.max_tokens, lm_mode=self.cfg.lm_mode)

    def fit(self, train: Sequence[SentencePair], dev: Sequence[SentencePair] | None = None, on_eval=None) -> list[EvalRecord]:
        batches = make_batches(list(train), self.cfg.max_tokens)
        if not batches:
            raise ConfigurationError("no trainable batches (empty corpus or every pair over budget)")
        eval_every = self.cfg.eval_every or len(batches)
        since_eval: list[float] = []
        while True:
            order = self.rng.permutation(len(batches))
            for bi in order:
                since_eval.append(self.train_step(batches[bi]))
                if self.step_count % eval_every == 0:
                    self._evaluate(dev, since_eval, on_eval)
                    since_eval = []
                if self.cfg.max_steps is not None and self.step_count >= self.cfg.max_steps:
                    if since_eval:
                        self._evaluate(dev, since_eval, on_eval)
                    return self.history
            self.epoch += 1
            if self.cfg.max_epochs is not None and self.epoch >= self.cfg.max_epochs:
                if since_eval:
                    self._evaluate(dev, since_eval, on_eval)
                return self.history

    def _evaluate(self, dev, since_eval, on_eval) -> None:
        dev_loss = self.dev_loss(dev) if dev else None
        dev_f = self.dev_metric(self.model) if self.dev_metric is not None else None
        rec = EvalRecord(self.step_count, self.epoch, self.optimizer.lr, float(np.mean(since_eval)), dev_loss, dev_f)
        self.history.append(rec)
        logger.info(rec.to_line())
        if dev_loss is not None:
            self.dev_losses.append(dev_loss)
            self.optimizer.lr = anneal(self.dev_losses, self.optimizer.lr, self.cfg.optim)
        if on_eval is not None:
            on_eval(rec, self)


def evaluate_loss(model, vocab: Vocabulary, pairs: Sequence[SentencePair], max_tokens: int = 4096, lm_mode: bool = False) -> float:
    """Plain (Lambda = 1) per-token loss in eval mode."""
    model.eval()
    total, tokens = 0.0, 0
    with no_grad():
        for group in make_batches(list(pairs), max_tokens):
            out = batch_loss(model, collate(group, vocab), lam=1.0, label_weight=0.0, lm_mode=lm_mode)
            total += float(out.seq.total.data)
            tokens += out.seq.tokens
    model.train()
    return total / max(tokens, 1)


def extended_argmax(model, batch: Batch) -> np.ndarray:
    """Teacher-forced argmax over the extended vocabulary, ``[B, T]`` extended ids."""
    with no_grad():
        enc = model.encode(batch.src_ids, batch.src_pad)
        dec = model.decode(batch.trg_in, enc)
        p_gen = model.generation_probs(dec.h).data
        if model.copy_attn is None:
            return p_gen.argmax(-1)
        c = model.copy_distribution(dec.h, enc)
    B, T, V = p_gen.shape
    n_oov = max((len(o) for o in batch.oov_tokens), default=0)
    alpha = c.alpha.data[..., None]
    dense = np.zeros((B, T, V + n_oov), dtype=p_gen.dtype)
    dense[..., :V] = (1.0 - alpha) * p_gen
    N = batch.src_ext.shape[1]
    bi = np.repeat(np.arange(B)[:, None, None], T, axis=1).repeat(N, axis=2)
    ti = np.repeat(np.arange(T)[None, :, None], B, axis=0).repeat(N, axis=2)
    ei = np.repeat(batch.src_ext[:, None, :], T, axis=1)
    mass = alpha * c.p_copy.data * (~batch.src_pad)[:, None, :]
    np.add.at(dense, (bi, ti, ei), mass)
    return dense.argmax(-1)


def token_accuracy(model, vocab: Vocabulary, pairs: Sequence[SentencePair], max_tokens: int = 4096) -> float:
    """Fraction of target tokens (eos included) predicted exactly under teacher forcing."""
    model.eval()
    hit = total = 0
    for group in make_batches(list(pairs), max_tokens):
        batch = collate(group, vocab)
        gold = batch.trg_out if model.copy_attn is not None else batch.trg_out_vocab
        pred = extended_argmax(model, batch)
        valid = ~batch.trg_pad
        hit += int(((pred == gold) & valid).sum())
        total += int(valid.sum())
    model.train()
    return hit / max(total, 1)


def init_model(
    config: ModelConfig,
    init: str = "random",
    checkpoint: str | Checkpoint | None = None,
    seed: int = 0,
    dtype=np.float64,
) -> CopyTransformer:
    """Build a model and initialise it according to ``init``.

    ``decoder_only`` copies the decoder (minus its encoder-decoder attention)
    and the tied embeddings from a decoder-LM checkpoint; the encoder, the
    encoder-decoder attention and the copy attention keep their random
    initial values. ``full_dae`` copies every parameter.
    """
    if init not in INIT_MODES:
        raise ConfigurationError(f"init must be one of {INIT_MODES}, got {init!r}")
    model = CopyTransformer(config, seed=seed, dtype=dtype)
    if init == "random":
        return model
    if checkpoint is None:
        raise ConfigurationError(f"init={init} needs a checkpoint")
    ckpt = checkpoint if isinstance(checkpoint, Checkpoint) else read_checkpoint(checkpoint)
    if init == "full_dae":
        load_parameters(model, ckpt)
    else:
        load_parameters(model, ckpt, names=model.decoder_parameter_names())
    return model


def pretrain(
    model: CopyTransformer,
    vocab: Vocabulary,
    dae_pairs: Sequence[SentencePair],
    cfg: TrainConfig | None = None,
    dev: Sequence[SentencePair] | None = None,
    save_path: str | None = None,
) -> Trainer:
    """Train the whole model to reconstruct clean text from corrupted text."""
    cfg = cfg or TrainConfig(lam=LAMBDA_PRETRAIN)
    trainer = Trainer(model, vocab, cfg)

    def _save(rec, tr):
        if save_path:
            save_checkpoint(save_path, tr.model, tr.optimizer, {"step": rec.step, "epoch": rec.epoch})

    trainer.fit(dae_pairs, dev, on_eval=_save)
    return trainer


def pretrain_decoder(
    model: CopyTransformer,
    vocab: Vocabulary,
    sentences: Sequence[Sequence[str]],
    cfg: TrainConfig | None = None,
) -> Trainer:
    """Train the decoder as a language model on clean sentences (no source)."""
    cfg = cfg or TrainConfig(lam=1.0)
    cfg.lm_mode = True
    cfg.label_weight = 0.0
    pairs = [SentencePair.from_tokens(s, s, vocab) for s in sentences]
    trainer = Trainer(model, vocab, cfg)
    trainer.fit(pairs)
    return trainer


def finetune(
    model: CopyTransformer,
    vocab: Vocabulary,
    labeled: Sequence[SentencePair],
    cfg: TrainConfig | None = None,
    dev: Sequence[SentencePair] | None = None,
    correct_pool: Sequence[Sequence[str]] | None = None,
    dev_metric=None,
    save_path: str | None = None,
) -> Trainer:
    cfg = cfg or TrainConfig(lam=LAMBDA_FINETUNE)
    trainer = Trainer(model, vocab, cfg, correct_pool=correct_pool, dev_metric=dev_metric)

    def _save(rec, tr):
        if save_path:
            save_checkpoint(save_path, tr.model, tr.optimizer, {"step": rec.step, "epoch": rec.epoch})

    trainer.fit(labeled, dev, on_eval=_save)
    return trainer
