import numpy as np
import pytest

from htsparse.synth import SynthConfig, synth_corpus
from htsparse.vectors import SparseVector


def sv(mapping, owner_id=""):
    return SparseVector.from_dict(mapping, owner_id)


@pytest.fixture(scope="session")
def small_corpus():
    return synth_corpus(SynthConfig(seed=7, n_docs=120, n_queries=15, vocab=400, topics=6))


@pytest.fixture(scope="session")
def default_corpus():
    return synth_corpus(SynthConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
