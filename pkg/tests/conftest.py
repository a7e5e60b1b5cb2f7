import numpy as np
import pytest

from amtl.audio import FrontendConfig
from amtl.model import ModelConfig, build_model
from amtl.synth import SynthSpec, generate_synthetic_corpus
from amtl.tokenization import build_char_vocab


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """The 8-utterance, 2-accent synthetic corpus used by the training tests."""
    out = tmp_path_factory.mktemp("corpus")
    records = generate_synthetic_corpus(SynthSpec(seed=7), out)
    return out, records


@pytest.fixture(scope="session")
def char_vocab(corpus):
    return build_char_vocab([r.text for r in corpus[1]])


FRONTEND = FrontendConfig(num_mels=40)


def tiny_config(vocab_size, num_accents=2, **kw):
    base = dict(
        feature_dim=FRONTEND.feature_dim,
        num_layers=2,
        num_heads=2,
        model_dim=32,
        ffn_dim=64,
        vocab_size=vocab_size,
        num_accents=num_accents,
        accent_head_layer="mid" if num_accents else None,
        dropout=0.0,
    )
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(vocab, accents=("accent_0", "accent_1"), seed=0, dtype=np.float32, **kw):
    cfg = tiny_config(len(vocab), len(accents), **kw)
    return build_model(cfg, seed, dtype, vocab=vocab, accents=list(accents), frontend=FRONTEND)


# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
