import numpy as np
import pytest

from riskpipe.nn.model import ModelConfig, init_model
from riskpipe.nn.train import ModelBundle
from riskpipe.pipeline import build_dataset
from riskpipe.risk import LABELS
from riskpipe.sensor import generate_corpus

TINY = ModelConfig(conv_filters=4, lstm_units=8)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "small.csv"
    series = generate_corpus(path, n_subjects=4, minutes=4, seed=3)
    return path, series


@pytest.fixture(scope="session")
def small_windows(small_corpus):
    return build_dataset(small_corpus[1])


@pytest.fixture
def tiny_bundle():
    params = init_model(TINY, seed=5)
    return ModelBundle(TINY, params, [label.display for label in LABELS], {})


def random_windows(n, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 30, 5)).astype(np.float32)


# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE: dict = {}


def record(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, bool(passed), detail)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {title}: {detail}")
