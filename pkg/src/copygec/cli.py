"""Command-line entry point: ``noise``, ``pretrain``, ``finetune``, ``correct``, ``evaluate``, ``stats``.

Settings resolve as built-in defaults < ``--config`` file (flat ``key=value``)
< command-line flags. The resolved settings, the seed, content hashes of every
input file and the metrics go into a JSON manifest written by every run.

Failures print one line ``error: <category>: <message>`` to stderr and exit
with the category's code.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

EXIT_CODES = {"internal": 1, "usage": 2, "config": 3, "io": 4, "data": 5, "checkpoint": 6, "numeric": 7}
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
MANIFEST_VERSION = 1


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


# ---------------------------------------------------------------- settings


def _bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _paths(text: str | list) -> list[str]:
    if isinstance(text, list):
        return text
    return [p.strip() for p in text.split(",") if p.strip()]


@dataclass(frozen=True)
class Key:
    name: str
    type: Callable[[str], Any]
    default: Any
    help: str
    flags: tuple[str, ...] = ()

    @property
    def option_strings(self) -> tuple[str, ...]:
        return self.flags or ("--" + self.name.replace("_", "-"),)


def _k(name, type_, default, help_, *flags):
    return Key(name, type_, default, help_, tuple(flags))


SEED = _k("seed", int, 13, "random seed")
THREADS = _k("threads", int, 1, "BLAS worker threads (1 = deterministic single-threaded mode)")
MANIFEST = _k("manifest", str, "", "manifest path (empty: next to the main output)")

MODEL_KEYS = [
    _k("d_model", int, 64, "model width"),
    _k("n_layers", int, 2, "encoder and decoder layers"),
    _k("n_heads", int, 2, "attention heads"),
    _k("d_ffn", int, 128, "feed-forward inner size"),
    _k("dropout", float, 0.2, "dropout rate"),
    _k("max_positions", int, 256, "longest sequence the model accepts"),
    _k("vocab_cap", int, 50_000, "vocabulary size cap when building a vocabulary"),
    _k("enable_copy", _bool, True, "copy-augmented output layer"),
    _k("balance_weighting", str, "normalized", "balance-factor input: normalized or raw"),
    _k("dtype", str, "float32", "parameter dtype: float32 or float64"),
]
OPTIM_KEYS = [
    _k("lr", float, 0.002, "initial learning rate"),
    _k("momentum", float, 0.99, "Nesterov momentum"),
    _k("lr_shrink", float, 0.5, "learning-rate factor when the dev loss stops improving"),
    _k("min_lr", float, 1e-4, "learning-rate floor"),
    _k("patience", int, 0, "evaluations without improvement before shrinking"),
    _k("clip_norm", float, 5.0, "global gradient-norm clip (0 disables)"),
    _k("max_tokens", int, 1024, "token budget per batch"),
    _k("max_steps", int, 0, "stop after this many updates (0: no limit)"),
    _k("max_epochs", int, 1, "passes over the data (0: no limit)"),
    _k("eval_every", int, 0, "steps between evaluations (0: once per pass)"),
]
TRAIN_IO = [
    _k("train", str, "", "training corpus"),
    _k("dev", str, "", "development corpus (parallel format)"),
    _k("vocab", str, "", "vocabulary file (empty: build from the training data)"),
    _k("save_dir", str, "", "output directory for the checkpoint, vocabulary and log"),
    _k("task_weight_label", float, 1.0, "weight of the token-labelling loss"),
]

COMMANDS: dict[str, list[Key]] = {
    "noise": [
        _k("input", str, "", "clean sentences, one per line"),
        _k("output", str, "", "output parallel file (corrupted<TAB>clean)"),
        _k("vocab", str, "", "vocabulary for inserted/replacing tokens (empty: build from the input)"),
        _k("p_delete", float, 0.1, "per-token deletion probability"),
        _k("p_insert", float, 0.1, "per-gap insertion probability"),
        _k("p_replace", float, 0.1, "per-token replacement probability"),
        _k("shuffle_sigma", float, 0.5, "std of the positional jitter used for shuffling"),
        SEED,
        THREADS,
        MANIFEST,
    ],
    "pretrain": TRAIN_IO
    + [
        _k("objective", str, "dae", "dae (corrupted -> clean pairs) or lm (decoder language model on sentences)"),
        _k("init", str, "random", "random or full-dae (continue from --init-checkpoint)"),
        _k("init_checkpoint", str, "", "checkpoint to start from"),
        _k("lambda_pretrain", float, 3.0, "edit weight for changed target tokens", "--lambda", "--lambda-pretrain"),
    ]
    + MODEL_KEYS
    + OPTIM_KEYS
    + [SEED, THREADS, MANIFEST],
    "finetune": TRAIN_IO
    + [
        _k("init", str, "random", "random, decoder-only or full-dae"),
        _k("init_checkpoint", str, "", "pre-trained checkpoint for decoder-only / full-dae"),
        _k("lambda_finetune", float, 1.8, "edit weight for changed target tokens", "--lambda", "--lambda-finetune"),
        _k("enable_copy_task", _bool, False, "mix identity pairs with encoder-decoder attention removed"),
        _k("copy_task_pool_path", str, "", "correct sentences for the identity pairs"),
        _k("keep_unchanged", _bool, False, "keep training pairs whose source equals the target"),
        _k("dev_beam", int, 1, "beam width for the dev F0.5 (0 disables)"),
    ]
    + MODEL_KEYS
    + OPTIM_KEYS
    + [SEED, THREADS, MANIFEST],
    "correct": [
        _k("model", str, "", "checkpoint"),
        _k("vocab", str, "", "vocabulary file (empty: the one stored in the checkpoint)"),
        _k("input", str, "", "sentences to correct, one per line"),
        _k("output", str, "", "corrected sentences"),
        _k("beam", int, 12, "beam width"),
        _k("max_len_factor", float, 1.5, "output length limit as a multiple of the source length (+5)"),
        _k("dump_alignments", str, "", "write per-step copy/attention alignment records (JSON lines)"),
        SEED,
        THREADS,
        MANIFEST,
    ],
    "evaluate": [
        _k("hyp", str, "", "system output, one sentence per line"),
        _k("src", str, "", "source sentences"),
        _k("ref", _paths, [], "reference file; repeat for several annotators", "--ref"),
        _k("vocab", str, "", "vocabulary file (needed by --exclude-unk)"),
        _k("exclude_unk", _bool, False, "drop edits whose replacement is out-of-vocabulary"),
        SEED,
        THREADS,
        MANIFEST,
    ],
    "stats": [
        _k("model", str, "", "checkpoint"),
        _k("vocab", str, "", "vocabulary file (empty: the one stored in the checkpoint)"),
        _k("alpha", _bool, False, "measure the mean balance factor on a correct and an errorful set"),
        _k("correct_set", str, "", "correct sentences (first column of a parallel file is used)"),
        _k("error_set", str, "", "errorful sentences (first column of a parallel file is used)"),
        _k("sample_size", int, 500, "sentences sampled from each set"),
        SEED,
        THREADS,
        MANIFEST,
    ],
}

COMMAND_HELP = {
    "noise": "corrupt clean text into a denoising corpus",
    "pretrain": "denoising or language-model pre-training",
    "finetune": "train on labelled error/correction pairs",
    "correct": "beam-search correction of a text file",
    "evaluate": "P / R / F0.5 of corrected text against references",
    "stats": "model size and balance-factor statistics",
}


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CliError("io", f"cannot read config {path}: {exc.strerror or exc}")
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError("config", f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="copygec", description="Copy-augmented Transformer for monolingual error correction.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, keys in COMMANDS.items():
        p = sub.add_parser(name, help=COMMAND_HELP[name], description=COMMAND_HELP[name])
        p.add_argument("--config", default=None, help="flat key=value settings file (flags override it)")
        for key in keys:
            hint = f"{key.help} [key: {key.name}; default: {key.default!r}]"
            if key.type is _bool:
                p.add_argument(*key.option_strings, dest=key.name, action=argparse.BooleanOptionalAction, default=None, help=hint)
            elif key.type is _paths:
                p.add_argument(*key.option_strings, dest=key.name, action="append", default=None, help=hint)
            else:
                p.add_argument(*key.option_strings, dest=key.name, type=key.type, default=None, help=hint)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    keys = {k.name: k for k in COMMANDS[command]}
    cfg = {name: k.default for name, k in keys.items()}
    if args.config:
        for name, value in read_config_file(args.config).items():
            if name not in keys:
                raise CliError("config", f"unknown key {name!r} in {args.config} for '{command}'")
            try:
                cfg[name] = keys[name].type(value)
            except ValueError as exc:
                raise CliError("config", f"{args.config}: {name}: {exc}")
    for name in keys:
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    return cfg


# ---------------------------------------------------------------- helpers


def content_hash(path: str | Path) -> str:
    """Git blob hash of a file."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _require(cfg: dict, *names: str) -> None:
    for n in names:
        if not cfg[n]:
            raise CliError("config", f"--{n.replace('_', '-')} is required")


def _existing(path: str) -> str:
    if not Path(path).is_file():
        raise CliError("io", f"no such file: {path}")
    return path


def _sentences(path: str) -> list[list[str]]:
    """One sentence per line; for a parallel file only the first column."""
    from .corpus import tokenize

    _existing(path)
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        toks = tokenize(line.split("\t", 1)[0])
        if toks:
            out.append(toks)
    return out


def _lines(path: str) -> list[list[str]]:
    from .corpus import tokenize

    _existing(path)
    return [tokenize(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]


class Run:
    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.inputs: dict[str, dict] = {}
        self.metrics: dict[str, Any] = {}

    def input(self, role: str, path: str) -> str:
        _existing(path)
        self.inputs[role] = {"path": path, "sha1": content_hash(path)}
        return path

    def manifest(self) -> dict:
        return {
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "config": self.cfg,
            "seed": self.cfg["seed"],
            "inputs": self.inputs,
            "metrics": self.metrics,
        }

    def write_manifest(self, default_path: str | Path) -> Path:
        path = Path(self.cfg["manifest"] or default_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _dtype(cfg):
    import numpy as np

    if cfg["dtype"] not in ("float32", "float64"):
        raise CliError("config", f"dtype must be float32 or float64, got {cfg['dtype']!r}")
    return np.float32 if cfg["dtype"] == "float32" else np.float64


def _train_config(cfg: dict, lam: float, copy_task: bool = False, lm_mode: bool = False):
    from .train import OptimizerConfig, TrainConfig

    if not cfg["max_steps"] and not cfg["max_epochs"]:
        raise CliError("config", "--max-steps 0 with --max-epochs 0 would never stop")
    optim = OptimizerConfig(
        lr=cfg["lr"],
        momentum=cfg["momentum"],
        lr_shrink=cfg["lr_shrink"],
        min_lr=cfg["min_lr"],
        patience=cfg["patience"],
        clip_norm=cfg["clip_norm"] or None,
    )
    return TrainConfig(
        optim=optim,
        lam=lam,
        label_weight=0.0 if lm_mode else cfg["task_weight_label"],
        copy_task=copy_task,
        max_tokens=cfg["max_tokens"],
        max_steps=cfg["max_steps"] or None,
        max_epochs=cfg["max_epochs"] or None,
        eval_every=cfg["eval_every"] or None,
        seed=cfg["seed"],
        lm_mode=lm_mode,
    )


def _model_config(cfg: dict, vocab_size: int):
    from .model import ModelConfig

    if cfg["balance_weighting"] not in ("normalized", "raw"):
        raise CliError("config", f"balance_weighting must be normalized or raw, got {cfg['balance_weighting']!r}")
    try:
        return ModelConfig(
            d_model=cfg["d_model"],
            n_layers=cfg["n_layers"],
            n_heads=cfg["n_heads"],
            d_ffn=cfg["d_ffn"],
            dropout=cfg["dropout"],
            vocab_size=vocab_size,
            max_positions=cfg["max_positions"],
            copy=cfg["enable_copy"],
            balance_weighting=cfg["balance_weighting"],
        )
    except ValueError as exc:
        raise CliError("config", str(exc))


def _load_model(run: Run, path: str, vocab_path: str = ""):
    """Model and vocabulary from a checkpoint written by ``pretrain``/``finetune``."""
    import numpy as np

    from .checkpoint import load_parameters, read_checkpoint
    from .corpus import Vocabulary
    from .model import CopyTransformer, ModelConfig

    ckpt = read_checkpoint(run.input("model", path))
    if vocab_path:
        vocab = Vocabulary.load(run.input("vocab", vocab_path))
    elif "vocab" in ckpt.meta:
        vocab = Vocabulary(ckpt.meta["vocab"])
    else:
        raise CliError("config", f"{path} stores no vocabulary; pass --vocab")
    config = ModelConfig.from_dict(ckpt.config)
    if len(vocab) != config.vocab_size:
        raise CliError("config", f"vocabulary has {len(vocab)} entries but the model expects {config.vocab_size}")
    dtype = ckpt.params()["embed"].dtype if "embed" in ckpt.params() else np.float32
    model = CopyTransformer(config, seed=run.cfg["seed"], dtype=dtype)
    load_parameters(model, ckpt)
    model.eval()
    return model, vocab, ckpt


# ---------------------------------------------------------------- commands


def cmd_noise(run: Run) -> Path:
    from .corpus import Vocabulary, build_vocab, read_sentences
    from .noising import NoiseConfig, NoiseTrace, noise_file

    cfg = run.cfg
    _require(cfg, "input", "output")
    run.input("input", cfg["input"])
    noise_cfg = NoiseConfig(cfg["p_delete"], cfg["p_insert"], cfg["p_replace"], cfg["shuffle_sigma"], cfg["seed"])
    if cfg["vocab"]:
        vocab = Vocabulary.load(run.input("vocab", cfg["vocab"]))
    else:
        vocab = build_vocab(toks for _, toks in read_sentences(cfg["input"]))
    trace = NoiseTrace()
    n = noise_file(cfg["input"], cfg["output"], noise_cfg, vocab.regular_tokens, trace)
    rates = {
        "delete_rate": trace.deleted / max(trace.n_clean, 1),
        "insert_rate": trace.inserted / max(trace.gaps, 1),
        "replace_rate": trace.replaced / max(trace.replace_trials, 1),
    }
    run.metrics = {"sentences": n, **{k: round(v, 6) for k, v in rates.items()}, "output_sha1": content_hash(cfg["output"])}
    print(f"sentences={n} " + " ".join(f"{k}={v:.4f}" for k, v in rates.items()))
    return Path(cfg["output"] + ".manifest.json")


def _prepare_training(run: Run, pairs_raw):
    from .corpus import Vocabulary, build_vocab

    cfg = run.cfg
    if cfg["vocab"]:
        vocab = Vocabulary.load(run.input("vocab", cfg["vocab"]))
    else:
        vocab = build_vocab((t for s, g in pairs_raw for t in (s, g)), cfg["vocab_cap"])
    return vocab


def _fit(run: Run, model, vocab, train_cfg, train_pairs, dev_pairs, correct_pool=None, dev_metric=None):
    from .checkpoint import save_checkpoint
    from .train import Trainer

    save_dir = Path(run.cfg["save_dir"])
    save_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = save_dir / "model.ckpt"
    log_path = save_dir / "train.log"
    log_lines: list[str] = []

    def on_eval(rec, tr):
        line = rec.to_line()
        log_lines.append(line)
        print(line, flush=True)
        save_checkpoint(ckpt_path, tr.model, tr.optimizer, {"step": rec.step, "epoch": rec.epoch, "vocab": vocab.regular_tokens})

    trainer = Trainer(model, vocab, train_cfg, correct_pool=correct_pool, dev_metric=dev_metric)
    history = trainer.fit(train_pairs, dev_pairs or None, on_eval=on_eval)
    log_path.write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
    vocab.save(save_dir / "vocab.txt")
    last = history[-1]
    run.metrics = {
        "steps": last.step,
        "train_loss": last.train_loss,
        "dev_loss": last.dev_loss,
        "dev_f05": last.dev_f05,
        "final_lr": last.lr,
        "checkpoint_sha1": content_hash(ckpt_path),
    }
    return save_dir / "manifest.json"


def _init_model(run: Run, vocab, allowed: tuple[str, ...]):
    from .model import ModelConfig
    from .train import init_model

    cfg = run.cfg
    init = cfg["init"]
    if init not in allowed:
        raise CliError("config", f"--init must be one of {', '.join(allowed)} here, got {init!r}")
    init = init.replace("-", "_")
    dtype = _dtype(cfg)
    if init == "random":
        if cfg["init_checkpoint"]:
            raise CliError("config", "--init random conflicts with --init-checkpoint")
        return init_model(_model_config(cfg, len(vocab)), "random", seed=cfg["seed"], dtype=dtype)
    if not cfg["init_checkpoint"]:
        raise CliError("config", f"--init {cfg['init']} needs --init-checkpoint")
    from .checkpoint import read_checkpoint

    ckpt = read_checkpoint(run.input("init_checkpoint", cfg["init_checkpoint"]))
    stored = ckpt.meta.get("vocab")
    if stored is not None and stored != vocab.regular_tokens:
        raise CliError("config", "the vocabulary differs from the one stored in --init-checkpoint")
    arch = ModelConfig.from_dict({**ckpt.config, "dropout": cfg["dropout"]})
    return init_model(arch, init, ckpt, seed=cfg["seed"], dtype=dtype)


def _vocab_for_init(run: Run, pairs_raw):
    """A warm start must reuse the checkpoint's vocabulary."""
    from .checkpoint import read_checkpoint
    from .corpus import Vocabulary

    cfg = run.cfg
    if cfg["init"] != "random" and cfg["init_checkpoint"] and not cfg["vocab"]:
        _existing(cfg["init_checkpoint"])
        stored = read_checkpoint(cfg["init_checkpoint"]).meta.get("vocab")
        if stored is not None:
            return Vocabulary(stored)
    return _prepare_training(run, pairs_raw)


def cmd_pretrain(run: Run) -> Path:
    from .corpus import SentencePair, read_parallel

    cfg = run.cfg
    _require(cfg, "train", "save_dir")
    if cfg["objective"] not in ("dae", "lm"):
        raise CliError("config", f"--objective must be dae or lm, got {cfg['objective']!r}")
    lm = cfg["objective"] == "lm"
    raw = read_parallel(run.input("train", cfg["train"]))
    if lm:
        raw = [(t, t) for _, t in raw]
    dev_raw = read_parallel(run.input("dev", cfg["dev"])) if cfg["dev"] else []
    vocab = _vocab_for_init(run, raw)
    model = _init_model(run, vocab, ("random", "full-dae"))
    train_pairs = [SentencePair.from_tokens(s, t, vocab).with_labels() for s, t in raw]
    dev_pairs = [SentencePair.from_tokens(s, t, vocab).with_labels() for s, t in dev_raw]
    tc = _train_config(cfg, 1.0 if lm else cfg["lambda_pretrain"], lm_mode=lm)
    return _fit(run, model, vocab, tc, train_pairs, dev_pairs)


def cmd_finetune(run: Run) -> Path:
    from .corpus import SentencePair, filter_unchanged, read_parallel
    from .decode import correct
    from .evaluate import score_corpus

    cfg = run.cfg
    _require(cfg, "train", "save_dir")
    if cfg["enable_copy_task"] and not cfg["copy_task_pool_path"]:
        raise CliError("config", "--enable-copy-task needs --copy-task-pool-path")
    if cfg["copy_task_pool_path"] and not cfg["enable_copy_task"]:
        raise CliError("config", "--copy-task-pool-path given without --enable-copy-task")
    raw = read_parallel(run.input("train", cfg["train"]))
    dev_raw = read_parallel(run.input("dev", cfg["dev"])) if cfg["dev"] else []
    vocab = _vocab_for_init(run, raw)
    model = _init_model(run, vocab, ("random", "decoder-only", "full-dae"))
    train_pairs = [SentencePair.from_tokens(s, t, vocab).with_labels() for s, t in raw]
    if not cfg["keep_unchanged"]:
        train_pairs, dropped = filter_unchanged(train_pairs)
        logging.getLogger(__name__).info("dropped %d unchanged training pairs", dropped)
    dev_pairs = [SentencePair.from_tokens(s, t, vocab).with_labels() for s, t in dev_raw]
    pool = _sentences(run.input("copy_task_pool", cfg["copy_task_pool_path"])) if cfg["enable_copy_task"] else None

    dev_metric = None
    if dev_raw and cfg["dev_beam"] > 0:
        srcs = [s for s, _ in dev_raw]
        refs = [[t for _, t in dev_raw]]

        def dev_metric(m):
            hyps = [out for out, _ in correct(m, vocab, srcs, beam_size=cfg["dev_beam"])]
            return score_corpus(srcs, hyps, refs).f05

    tc = _train_config(cfg, cfg["lambda_finetune"], copy_task=cfg["enable_copy_task"])
    return _fit(run, model, vocab, tc, train_pairs, dev_pairs, pool, dev_metric)


def cmd_correct(run: Run) -> Path:
    from .corpus import detokenize
    from .decode import alignment_records, correct

    cfg = run.cfg
    _require(cfg, "model", "input", "output")
    if cfg["beam"] < 1:
        raise CliError("config", "--beam must be >= 1")
    model, vocab, _ = _load_model(run, cfg["model"], cfg["vocab"])
    lines = _lines(run.input("input", cfg["input"]))
    outputs, truncated = [], 0
    dump = open(cfg["dump_alignments"], "w", encoding="utf-8") if cfg["dump_alignments"] else None
    try:
        for i, src in enumerate(lines):
            if not src:
                outputs.append([])
                continue
            (out, hyp), = correct(model, vocab, [src], cfg["beam"], cfg["max_len_factor"])
            truncated += hyp.truncated
            outputs.append(out)
            if dump is not None:
                rec = {"index": i, "source": src, "output": out, "steps": alignment_records(hyp, src)}
                dump.write(json.dumps(rec, sort_keys=True) + "\n")
    finally:
        if dump is not None:
            dump.close()
    Path(cfg["output"]).write_text("".join(detokenize(o) + "\n" for o in outputs), encoding="utf-8")
    run.metrics = {"sentences": len(lines), "truncated": truncated, "output_sha1": content_hash(cfg["output"])}
    print(f"sentences={len(lines)} truncated={truncated}")
    return Path(cfg["output"] + ".manifest.json")


def cmd_evaluate(run: Run) -> Path:
    from .corpus import Vocabulary
    from .evaluate import score_corpus

    cfg = run.cfg
    _require(cfg, "hyp", "src", "ref")
    if cfg["exclude_unk"] and not cfg["vocab"]:
        raise CliError("config", "--exclude-unk needs --vocab")
    srcs = _lines(run.input("src", cfg["src"]))
    hyps = _lines(run.input("hyp", cfg["hyp"]))
    refs = [_lines(run.input(f"ref{i}", p)) for i, p in enumerate(cfg["ref"])]
    vocab = Vocabulary.load(run.input("vocab", cfg["vocab"])) if cfg["vocab"] else None
    for name, rows in [("hyp", hyps)] + [(f"ref {p}", r) for p, r in zip(cfg["ref"], refs)]:
        if len(rows) != len(srcs):
            raise CliError("data", f"{name} has {len(rows)} lines but src has {len(srcs)}")
    report = score_corpus(srcs, hyps, refs, vocab, exclude_unk=cfg["exclude_unk"])
    print(report.to_text())
    run.metrics = {
        "precision": round(report.precision, 4),
        "recall": round(report.recall, 4),
        "f05": round(report.f05, 4),
        "tp": report.counts.tp,
        "fp": report.counts.fp,
        "fn": report.counts.fn,
        "no_edits": report.no_edits,
    }
    return Path(cfg["hyp"] + ".eval.manifest.json")


def cmd_stats(run: Run) -> Path:
    import numpy as np

    from .decode import measure_alpha

    cfg = run.cfg
    _require(cfg, "model")
    if cfg["alpha"] and not (cfg["correct_set"] and cfg["error_set"]):
        raise CliError("config", "--alpha needs --correct-set and --error-set")
    if not cfg["alpha"] and (cfg["correct_set"] or cfg["error_set"]):
        raise CliError("config", "--correct-set/--error-set are only used with --alpha")
    model, vocab, _ = _load_model(run, cfg["model"], cfg["vocab"])
    run.metrics = {"parameters": model.num_parameters(), "vocab_size": len(vocab)}
    print(f"parameters={model.num_parameters()} vocab_size={len(vocab)}")
    if cfg["alpha"]:
        rng = np.random.default_rng(cfg["seed"])
        for role in ("correct_set", "error_set"):
            sents = _sentences(run.input(role, cfg[role]))
            if len(sents) > cfg["sample_size"]:
                idx = np.sort(rng.choice(len(sents), cfg["sample_size"], replace=False))
                sents = [sents[i] for i in idx]
            alpha = measure_alpha(model, vocab, sents)
            name = role.split("_")[0]
            run.metrics[f"alpha_{name}"] = alpha
            run.metrics[f"sentences_{name}"] = len(sents)
            print(f"alpha_{name}={alpha:.4f} sentences_{name}={len(sents)}")
        gap = run.metrics["alpha_correct"] - run.metrics["alpha_error"]
        run.metrics["alpha_gap"] = gap
        print(f"alpha_gap={gap:.4f}")
    return Path(cfg["model"] + ".stats.manifest.json")


HANDLERS = {
    "noise": cmd_noise,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "correct": cmd_correct,
    "evaluate": cmd_evaluate,
    "stats": cmd_stats,
}


def _set_threads(n: int) -> None:
    if n < 1:
        raise CliError("config", "--threads must be >= 1")
    for var in THREAD_VARS:
        os.environ[var] = str(n)


def _categorize(exc: BaseException) -> tuple[str, str]:
    from .checkpoint import CheckpointError
    from .corpus import CorpusError
    from .noising import NoiseConfigError
    from .objectives import ConfigurationError

    if isinstance(exc, CliError):
        return exc.category, str(exc)
    if isinstance(exc, CheckpointError):
        detail = "; ".join(exc.mismatches) if exc.mismatches else ""
        return "checkpoint", f"{exc}: {detail}" if detail else str(exc)
    if isinstance(exc, (ConfigurationError, NoiseConfigError)):
        return "config", str(exc)
    if isinstance(exc, CorpusError):
        return "data", str(exc)
    if isinstance(exc, FloatingPointError):
        return "numeric", str(exc)
    if isinstance(exc, OSError):
        where = f" {exc.filename}" if exc.filename else ""
        return "io", f"{exc.strerror or exc}{where}"
    return "internal", f"{type(exc).__name__}: {exc}"


def run(argv: Sequence[str] | None = None) -> int:
    """Execute one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise CliError("usage", "a command is required (noise, pretrain, finetune, correct, evaluate, stats)")
        cfg = resolve(args.command, args)
        _set_threads(cfg["threads"])
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        r = Run(args.command, cfg)
        default_manifest = HANDLERS[args.command](r)
        r.write_manifest(default_manifest)
        return 0
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        category, message = _categorize(exc)
        one_line = " ".join(message.split())
        print(f"error: {category}: {one_line}", file=sys.stderr)
        return EXIT_CODES[category]


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
