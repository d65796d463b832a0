"""Length-normalised beam search over the copy-extended vocabulary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad
from .copying import mix
from .corpus import BOS_ID, EOS_ID, UNK, UNK_ID, Vocabulary, extend_source
from .model import CopyTransformer, EncoderStates

DEFAULT_BEAM = 12


def default_max_len(src_len: int, factor: float = 1.5, offset: int = 5) -> int:
    return int(factor * src_len + offset)


@dataclass
class Hypothesis:
    ext_ids: list[int]  # extended ids, eos included when finished
    tokens: list[str]  # surface tokens, eos excluded
    score: float  # sum of log mixed probabilities
    alpha_trace: list[float] = field(default_factory=list)
    copy_trace: list[int | None] = field(default_factory=list)  # argmax copy source index per step
    attn_trace: list[int | None] = field(default_factory=list)  # argmax encoder-decoder attention per step
    finished: bool = False
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.ext_ids)

    @property
    def normalized_score(self) -> float:
        return self.score / max(self.length, 1)


@dataclass
class StepDists:
    log_probs: np.ndarray  # [K, |V| + n_oov]
    alpha: np.ndarray | None  # [K]
    copy_argmax: np.ndarray | None  # [K]
    attn_argmax: np.ndarray | None  # [K]


class SourceContext:
    """Encoder states and extended-vocabulary bookkeeping for one sentence."""

    def __init__(self, model: CopyTransformer, vocab: Vocabulary, src_tokens: Sequence[str]):
        if not src_tokens:
            raise ValueError("cannot decode an empty source sentence")
        self.model = model
        self.vocab = vocab
        self.src_tokens = list(src_tokens)
        self.src_ids = np.asarray([vocab.encode(self.src_tokens)], dtype=np.int64)
        ext, oov = extend_source(self.src_tokens, vocab)
        self.src_ext = np.asarray(ext, dtype=np.int64)
        self.oov_tokens = oov if model.copy_attn is not None else []
        with no_grad():
            self.enc = model.encode(self.src_ids)

    @property
    def ext_size(self) -> int:
        return len(self.vocab) + len(self.oov_tokens)

    def surface(self, ext_id: int) -> str:
        V = len(self.vocab)
        return self.vocab.token(ext_id) if ext_id < V else self.oov_tokens[ext_id - V]

    def step(self, prefixes: Sequence[Sequence[int]]) -> StepDists:
        """Log mixed probabilities of the next token after each prefix of extended ids."""
        V = len(self.vocab)
        K = len(prefixes)
        t = len(prefixes[0])
        ids = np.empty((K, t + 1), dtype=np.int64)
        ids[:, 0] = BOS_ID
        if t:
            arr = np.asarray(prefixes, dtype=np.int64)
            ids[:, 1:] = np.where(arr < V, arr, UNK_ID)
        enc = EncoderStates(Tensor(np.repeat(self.enc.H_src.data, K, axis=0)), np.repeat(self.enc.pad_mask, K, axis=0))
        with no_grad():
            out = self.model.decode_step(ids, enc)
        p_gen = out.p_gen.data
        attn_arg = None if out.cross_weights is None else out.cross_weights.argmax(-1)
        if out.p_copy is None:
            with np.errstate(divide="ignore"):
                return StepDists(np.log(p_gen), None, None, attn_arg)
        p_copy = out.p_copy.data
        alpha = out.alpha.data
        dense = mix(p_gen, p_copy, alpha, self.src_ext, len(self.oov_tokens))
        with np.errstate(divide="ignore"):
            logp = np.log(dense)
        return StepDists(logp, alpha, p_copy.argmax(-1), attn_arg)


def beam_search(
    model: CopyTransformer,
    vocab: Vocabulary,
    src_tokens: Sequence[str],
    beam_size: int = DEFAULT_BEAM,
    max_len: int | None = None,
) -> list[Hypothesis]:
    """Finished hypotheses ranked by score / length (best first).

    Each step keeps the ``beam_size`` best live continuations by cumulative
    log probability; an eos continuation is finalised only if it ranks within
    the top ``beam_size``. Search stops once ``beam_size`` hypotheses have
    finished or ``max_len`` tokens were produced. If nothing finished, the
    best live hypothesis is returned with ``truncated=True``.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    max_len = default_max_len(len(src_tokens)) if max_len is None else max_len
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    model.eval()
    ctx = SourceContext(model, vocab, src_tokens)
    live = [Hypothesis([], [], 0.0)]
    finished: dict[tuple[str, ...], Hypothesis] = {}
    for _ in range(max_len):
        dists = ctx.step([h.ext_ids for h in live])
        logp = dists.log_probs
        cand = logp + np.array([h.score for h in live])[:, None]
        flat = cand.reshape(-1)
        n_take = min(2 * beam_size, int(np.isfinite(flat).sum()))
        if n_take == 0:
            break
        # stable ordering: score desc, then (hypothesis, token) index
        top = np.argsort(-flat, kind="stable")[:n_take]
        new_live: dict[tuple[str, ...], Hypothesis] = {}
        for rank, flat_idx in enumerate(top):
            k, tok = divmod(int(flat_idx), logp.shape[1])
            parent = live[k]
            score = float(flat[flat_idx])
            h = Hypothesis(
                parent.ext_ids + [tok],
                parent.tokens + ([] if tok == EOS_ID else [ctx.surface(tok)]),
                score,
                parent.alpha_trace + ([float(dists.alpha[k])] if dists.alpha is not None else []),
                parent.copy_trace + [None if dists.copy_argmax is None else int(dists.copy_argmax[k])],
                parent.attn_trace + [None if dists.attn_argmax is None else int(dists.attn_argmax[k])],
            )
            if tok == EOS_ID:
                if rank < beam_size:
                    h.finished = True
                    key = tuple(h.tokens)
                    if key not in finished or finished[key].normalized_score < h.normalized_score:
                        finished[key] = h
            elif len(new_live) < beam_size:
                key = tuple(h.tokens)
                if key not in new_live or new_live[key].score < h.score:
                    new_live[key] = h
        live = list(new_live.values())
        if len(finished) >= beam_size or not live:
            break
    if finished:
        return sorted(finished.values(), key=lambda h: -h.normalized_score)
    best = max(live, key=lambda h: h.normalized_score)
    best.truncated = True
    return [best]


def greedy_decode(model: CopyTransformer, vocab: Vocabulary, src_tokens: Sequence[str], max_len: int | None = None) -> Hypothesis:
    """Stepwise argmax until eos or ``max_len``."""
    max_len = default_max_len(len(src_tokens)) if max_len is None else max_len
    model.eval()
    ctx = SourceContext(model, vocab, src_tokens)
    h = Hypothesis([], [], 0.0)
    for _ in range(max_len):
        d = ctx.step([h.ext_ids])
        tok = int(np.argmax(d.log_probs[0]))
        h.score += float(d.log_probs[0, tok])
        h.ext_ids.append(tok)
        if d.alpha is not None:
            h.alpha_trace.append(float(d.alpha[0]))
        h.copy_trace.append(None if d.copy_argmax is None else int(d.copy_argmax[0]))
        h.attn_trace.append(None if d.attn_argmax is None else int(d.attn_argmax[0]))
        if tok == EOS_ID:
            h.finished = True
            return h
        h.tokens.append(ctx.surface(tok))
    h.truncated = True
    return h


def copy_through_unk(hyp: Hypothesis, src_tokens: Sequence[str]) -> list[str]:
    """Surface sentence with every generated unk replaced by the source token
    under the step's strongest copy attention."""
    out = []
    for t, tok in enumerate(hyp.tokens):
        if tok == UNK and t < len(hyp.copy_trace) and hyp.copy_trace[t] is not None:
            out.append(src_tokens[hyp.copy_trace[t]])
        else:
            out.append(tok)
    return out


def correct(
    model: CopyTransformer,
    vocab: Vocabulary,
    sentences: Sequence[Sequence[str]],
    beam_size: int = DEFAULT_BEAM,
    max_len_factor: float = 1.5,
) -> list[tuple[list[str], Hypothesis]]:
    """Decode every sentence; returns ``(surface tokens, best hypothesis)`` pairs."""
    results = []
    for src in sentences:
        max_len = default_max_len(len(src), max_len_factor)
        best = beam_search(model, vocab, src, beam_size, max_len)[0]
        results.append((copy_through_unk(best, src), best))
    return results


def measure_alpha(model: CopyTransformer, vocab: Vocabulary, sentences: Sequence[Sequence[str]]) -> float:
    """Mean balance factor over every greedy decoding step of every sentence."""
    if model.copy_attn is None:
        raise ValueError("model has no copy mechanism")
    if not sentences:
        raise ValueError("measure_alpha needs at least one sentence")
    total, steps = 0.0, 0
    for src in sentences:
        h = greedy_decode(model, vocab, src)
        total += sum(h.alpha_trace)
        steps += len(h.alpha_trace)
    return total / max(steps, 1)


def alignment_records(hyp: Hypothesis, src_tokens: Sequence[str]) -> list[dict]:
    """Per output position: emitted token, argmax copy source, argmax encoder-decoder source, alpha."""
    records = []
    surface = hyp.tokens + (["</s>"] if hyp.finished else [])
    for t, tok in enumerate(surface):
        c = hyp.copy_trace[t] if t < len(hyp.copy_trace) else None
        a = hyp.attn_trace[t] if t < len(hyp.attn_trace) else None
        records.append(
            {
                "position": t,
                "token": tok,
                "copy_src": c,
                "copy_token": None if c is None else src_tokens[c],
                "attn_src": a,
                "attn_token": None if a is None else src_tokens[a],
                "alpha": hyp.alpha_trace[t] if t < len(hyp.alpha_trace) else None,
            }
        )
    return records

