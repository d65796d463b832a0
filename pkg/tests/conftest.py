import numpy as np
import pytest

import toy
from copygec.corpus import Vocabulary
from copygec.model import CopyTransformer, ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_vocab():
    return Vocabulary(["a", "b", "c", "d", "e", "f", "g", "h"])


def tiny_config(vocab_size: int, **kw) -> ModelConfig:
    """d=8 two-layer model used by gradient checks (double precision)."""
    base = dict(d_model=8, n_layers=2, n_heads=2, d_ffn=16, dropout=0.0, vocab_size=vocab_size, max_positions=32)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model(small_vocab):
    return CopyTransformer(tiny_config(len(small_vocab)), seed=3, dtype=np.float64)


@pytest.fixture(scope="session")
def overfit_run():
    return toy.overfit()


@pytest.fixture(scope="session")
def oov_run():
    return toy.oov_experiment()


@pytest.fixture(scope="session")
def pretrain_run():
    return toy.pretrain_experiment()


@pytest.fixture(scope="session")
def alpha_run():
    return toy.alpha_experiment()


# -- acceptance verdicts ------------------------------------------------------------------------

_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` records a PASS/FAIL line for acceptance criterion ``n``."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
