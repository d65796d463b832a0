# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Corrupting clean text
#
# The denoising corpus is built by deleting, inserting and replacing tokens,
# then jittering word order. Each sentence draws from its own generator, so a
# corpus can be regenerated from any line onward.

# %%
import numpy as np

from copygec.noising import NoiseConfig, NoiseTrace, audit_noise, corrupt, make_pretrain_corpus, sentence_rng
from copygec.synthetic import lexicon, run_sentences

words = lexicon(40)
clean = run_sentences(np.random.default_rng(0), 2000, words, min_len=15, max_len=25)
cfg = NoiseConfig(rng_seed=42)

# %%
pairs = list(make_pretrain_corpus(clean, cfg, words))
for noisy, src in pairs[:3]:
    print(" ".join(src))
    print(" ".join(noisy))
    print()

# %% [markdown]
# The trace counts each operation against its own number of trials, so the
# rates should sit near the configured 0.1 each.

# %%
trace = NoiseTrace()
for k, sent in enumerate(clean):
    corrupt(sent, cfg, sentence_rng(cfg.rng_seed, k), words, trace)
print(f"delete {trace.deleted / trace.n_clean:.4f}")
print(f"insert {trace.inserted / trace.gaps:.4f}")
print(f"replace {trace.replaced / trace.replace_trials:.4f}")

# %% [markdown]
# An audit from the text alone sees only a minimal edit script. A swapped pair
# reads as two replacements, and a deletion next to an insertion reads as one
# replacement, so these numbers drift from the trace even with the shuffle off.

# %%
no_shuffle = NoiseConfig(shuffle_sigma=0.0, rng_seed=42)
stats = audit_noise(make_pretrain_corpus(clean, no_shuffle, words))
print(f"delete {stats.delete_rate:.4f}  insert {stats.insert_rate:.4f}  replace {stats.replace_rate:.4f}")
print(f"mean edit distance {stats.mean_distance:.2f}")

# %% [markdown]
# Shuffle only: how far do tokens move?

# %%
shuffle_only = NoiseConfig(p_delete=0, p_insert=0, p_replace=0, rng_seed=42)
perm_stats = audit_noise(make_pretrain_corpus(clean, shuffle_only, words))
for shift, frac in perm_stats.displacement.items():
    print(f"|shift| {'>=' if shift == 3 else '=='} {shift}: {frac:.3f}")
