from __future__ import annotations

import time
from importlib import resources

import pytest

from dialect_nmt.corpus import Region, SplitCorpus, load_corpus, normalize_corpus
from dialect_nmt.tokenizer import build_vocab
from dialect_nmt.trainer import Hyperparams, model_config_for, train

OVERFIT_EPOCHS = 120

_criteria: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): test backs a named acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(marker.args[0], []).append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, results in _criteria.items():
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture(scope="session")
def toy_corpus_path():
    return resources.files("dialect_nmt") / "data" / "toy_corpus.jsonl"


@pytest.fixture(scope="session")
def toy_pairs(toy_corpus_path):
    """The 32 normalized Chittagong pairs."""
    examples, dropped = normalize_corpus(load_corpus(toy_corpus_path, Region.CHITTAGONG))
    assert dropped == 0 and len(examples) == 32
    return tuple(examples)


class Overfit:
    def __init__(self, pairs, params, history, vocab, config, seconds):
        self.pairs = pairs
        self.params = params
        self.history = history
        self.vocab = vocab
        self.config = config
        self.seconds = seconds


@pytest.fixture(scope="session")
def overfit(toy_pairs):
    """Default-config model trained on all 32 toy pairs; shared across modules."""
    corpus = SplitCorpus(train=toy_pairs, validation=(), test=())
    hp = Hyperparams(epochs=OVERFIT_EPOCHS)
    vocab = build_vocab(toy_pairs)
    start = time.perf_counter()
    params, history = train(corpus, Region.CHITTAGONG, hp, vocab=vocab)
    seconds = time.perf_counter() - start
    return Overfit(toy_pairs, params, history, vocab, model_config_for(hp, vocab), seconds)
