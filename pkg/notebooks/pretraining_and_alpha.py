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
# # Pre-training and the balance factor
#
# First, how much one fine-tuning epoch gains from each kind of
# initialisation. Then, whether mixing in identity pairs teaches the model to
# lean on copying when the input is already correct.

# %%
import sys
from pathlib import Path

sys.path.insert(0, str(Path.cwd().parent / "tests"))

import toy

pre = toy.pretrain_experiment()
for name in ("random", "decoder_only", "full_dae"):
    print(f"{name:13s} dev loss {pre.dev_loss[name]:.3f}  f0.5 {pre.dev_f05[name]:.4f}")
print("no fine-tuning:", {k: round(v, 3) for k, v in pre.dev_loss_no_finetune.items()})

# %% [markdown]
# The balance factor is the share of probability given to generation. A lower
# value on clean input than on errorful input means the model copies more when
# nothing needs fixing.

# %%
alpha = toy.alpha_experiment()
for label, pair in (("with copy task", alpha.with_task), ("without", alpha.without_task)):
    print(f"{label:15s} correct {pair[0]:.3f}  errorful {pair[1]:.3f}  gap {alpha.gap(pair):+.3f}")
