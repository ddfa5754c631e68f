"""Shared fixtures: small synthetic corpora rendered once per session."""

import sys

import pytest

from partialsed.store import build_synth_corpus, load_corpus
from partialsed.synth import default_config


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdict lines after the progress output."""
    module = (sys.modules.get("test_acceptance")
              or sys.modules.get("tests.test_acceptance"))
    lines = getattr(module, "VERDICT_LINES", None) if module else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def corpus_dirs(tmp_path_factory):
    """(train_dir, eval_dir) for the default desk-scale corpus pair."""
    root = tmp_path_factory.mktemp("corpora")
    train_dir = root / "train"
    eval_dir = root / "eval"
    build_synth_corpus(train_dir, default_config(50), seed=0)
    build_synth_corpus(eval_dir, default_config(20), seed=100)
    return train_dir, eval_dir


@pytest.fixture(scope="session")
def train_corpus(corpus_dirs):
    return load_corpus(corpus_dirs[0])


@pytest.fixture(scope="session")
def eval_corpus(corpus_dirs):
    return load_corpus(corpus_dirs[1])


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """A 3-clips-per-scene corpus for fast trainer and CLI tests."""
    root = tmp_path_factory.mktemp("tiny")
    build_synth_corpus(root / "corpus", default_config(3), seed=5)
    return root / "corpus"


@pytest.fixture(scope="session")
def tiny_corpus(tiny_corpus_dir):
    return load_corpus(tiny_corpus_dir)
