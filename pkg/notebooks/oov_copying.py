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
# # Copying names the model never saw
#
# Two desk-scale models learn the same correction task, one with the copy
# distribution and one without. About a tenth of the tokens are names outside
# the vocabulary. Training both takes a minute or two on a laptop CPU.

# %%
import sys
from pathlib import Path

sys.path.insert(0, str(Path.cwd().parent / "tests"))

import toy
from copygec.corpus import UNK
from copygec.decode import correct

run = toy.oov_experiment()
print(f"share of out-of-vocabulary tokens: {run.oov_share:.3f}")

# %%
for name, side in (("copy", run.copy), ("baseline", run.baseline)):
    print(f"{name:9s} f0.5={side.f05:.4f}  unk sentences={side.output_unk_sentences}/{side.oov_sentences}")

# %% [markdown]
# A name made up on the spot.

# %%
src = ["Zyxwv" if run.vocab.is_oov(t) else t for t in run.test_raw[0][0]]
print("source  ", " ".join(src))
for name, side in (("copy", run.copy), ("baseline", run.baseline)):
    _, hyp = correct(side.model, run.vocab, [src], beam_size=4)[0]
    print(f"{name:9s}", " ".join(hyp.tokens), "" if UNK not in hyp.tokens else "(unk)")
