"""Independent reference implementations used by the decode and acceptance tests."""

from __future__ import annotations

import itertools
import math

import numpy as np

from copygec.autodiff import Tensor, no_grad
from copygec.copying import MixedDistribution
from copygec.corpus import BOS_ID, EOS_ID, UNK_ID, extend_source
from copygec.model import EncoderStates, StepOutput


def sequence_log_prob(model, vocab, src_tokens, ext_ids) -> float:
    """Teacher-forced log probability of ``ext_ids``, one full forward per prefix."""
    V = len(vocab)
    _, oov = extend_source(src_tokens, vocab)
    model.eval()
    with no_grad():
        enc = model.encode(np.array([vocab.encode(src_tokens)]))
        total = 0.0
        for t, target in enumerate(ext_ids):
            prefix = [BOS_ID] + [i if i < V else UNK_ID for i in ext_ids[:t]]
            out = model.decode_step(np.array([prefix]), enc)
            md = MixedDistribution(out.p_gen.data[0], out.p_copy.data[0], float(out.alpha.data[0]), src_tokens, vocab)
            surface = vocab.token(target) if target < V else oov[target - V]
            p = md.prob(surface)
            if p == 0.0:
                return -math.inf
            total += math.log(p)
    return total


def exhaustive_search(model, vocab, src_tokens, max_len):
    """Every eos-terminated sequence of at most ``max_len`` ids, best normalised score first."""
    _, oov = extend_source(src_tokens, vocab)
    ext_size = len(vocab) + len(oov)
    body = [i for i in range(ext_size) if i != EOS_ID]
    scored = []
    for n in range(max_len):
        for seq in itertools.product(body, repeat=n):
            ids = list(seq) + [EOS_ID]
            lp = sequence_log_prob(model, vocab, src_tokens, ids)
            scored.append((lp / len(ids), ids))
    scored.sort(key=lambda x: -x[0])
    return scored, ext_size


class CopyInOrderModel:
    """Puts probability 1 on copying source position t at step t, then eos."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.copy_attn = object()

    def eval(self):
        return self

    def encode(self, src_ids, pad_mask=None):
        B, N = src_ids.shape
        return EncoderStates(Tensor(np.zeros((B, N, 1))), np.zeros((B, N), dtype=bool))

    def decode_step(self, prefix_ids, enc, cross_keep=None):
        K, t = prefix_ids.shape
        N = enc.H_src.shape[1]
        pos = t - 1
        p_gen = np.zeros((K, self.vocab_size))
        p_gen[:, EOS_ID] = 1.0
        p_copy = np.zeros((K, N))
        if pos < N:
            p_copy[:, pos] = 1.0
            alpha = np.ones(K)
        else:
            p_copy[:, 0] = 1.0
            alpha = np.zeros(K)
        cross = np.full((K, N), 1.0 / N)
        return StepOutput(Tensor(np.zeros((K, 1))), Tensor(p_gen), Tensor(p_copy), Tensor(alpha), cross)

