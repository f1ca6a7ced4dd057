import os

import pytest

from config import Config
from corpus_tools import make_synthetic_corpus
from models import ModelConfig, QagExample, Split
from tensor_autodiff import precision, set_precision
from tokenizer_vocab import build_vocab

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: training-based checks (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def quiet_training(monkeypatch):
    monkeypatch.setattr(Config, "PROGRESS", False)
    set_precision("f32")
    yield
    set_precision("f32")


@pytest.fixture
def f64():
    with precision("f64"):
        yield


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def tiny_config(vocab_size: int, **overrides) -> ModelConfig:
    shape = dict(d_model=8, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=16, max_len=16)
    shape.update(overrides)
    return ModelConfig(vocab_size=vocab_size, **shape)


@pytest.fixture
def toy_examples():
    passage = "Tom eats bread with butter. He walks to school. Tom likes chess."
    return [
        QagExample(id="t1", passage=passage, question="What does Tom eat?", answer="bread with butter",
                   split=Split.train, passage_id="p1"),
        QagExample(id="t2", passage=passage, question="Why does Tom walk?", answer="to stay healthy",
                   split=Split.train, passage_id="p1"),
        QagExample(id="t3", passage="Mia plays chess on Sundays.", question="What does Mia play?", answer="chess",
                   split=Split.train, passage_id="p2"),
    ]


@pytest.fixture
def toy_vocab(toy_examples):
    return build_vocab([t for ex in toy_examples for t in (ex.passage, ex.question, ex.answer)])


@pytest.fixture
def synthetic_abstractive():
    return make_synthetic_corpus(seed=3, size=20, profile="abstractive")


@pytest.fixture
def synthetic_extractive():
    return make_synthetic_corpus(seed=4, size=20, profile="extractive")
