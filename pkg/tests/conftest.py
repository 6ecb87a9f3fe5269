import warnings

import numpy as np
import pytest
from hypothesis import settings

from gbdtwm.data import Dataset

warnings.filterwarnings("ignore", message="A NumPy version")
settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


class StubModel:
    """Anything with predict_raw; rows are looked up by position."""

    def __init__(self, raw):
        self.raw = np.asarray(raw, dtype=np.float64)

    def predict_raw(self, X):
        X = np.atleast_2d(np.asarray(X))
        assert X.shape[0] == self.raw.shape[0]
        return self.raw.copy()

    def predict(self, X):
        return np.argmax(self.predict_raw(X), axis=1)


def blobs(centers, per, spread, seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(c, spread, size=(per, len(c))) for c in centers])
    y = np.repeat(np.arange(len(centers)), per)
    return X, y


@pytest.fixture
def toy3():
    X, y = blobs([(0, 0), (6, 0), (0, 6)], 30, 1.0, 7)
    return Dataset(X, y, 3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
