"""Copy-augmented Transformer for monolingual error correction, on numpy.

Submodules are imported on first attribute access so that the command-line
entry point can configure BLAS threading before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "Tensor": "autodiff",
    "no_grad": "autodiff",
    "ModelConfig": "model",
    "CopyTransformer": "model",
    "count_parameters": "model",
    "Vocabulary": "corpus",
    "SentencePair": "corpus",
    "build_vocab": "corpus",
    "read_parallel": "corpus",
    "NoiseConfig": "noising",
    "corrupt": "noising",
    "TrainConfig": "train",
    "OptimizerConfig": "train",
    "pretrain": "train",
    "finetune": "train",
    "init_model": "train",
    "beam_search": "decode",
    "greedy_decode": "decode",
    "correct": "decode",
    "extract_edits": "evaluate",
    "f_half": "evaluate",
    "score_corpus": "evaluate",
    "score_excluding_unk": "evaluate",
    "save_checkpoint": "checkpoint",
    "load_checkpoint": "checkpoint",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
