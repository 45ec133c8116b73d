import numpy as np
import pytest

from cesor.core import EpisodeRecord, ReturnBatch, Source, Trajectory


def make_batch(returns, weights=None, n_reference=None):
    """Batch of one-step dummy episodes; records past ``n_reference`` are shifted."""
    returns = list(map(float, returns))
    n = len(returns)
    n_reference = n if n_reference is None else n_reference
    weights = [1.0] * n if weights is None else list(map(float, weights))
    records = []
    for i, (r, w) in enumerate(zip(returns, weights)):
        src = Source.REFERENCE if i < n_reference else Source.SHIFTED
        records.append(EpisodeRecord(np.zeros(1), Trajectory([np.zeros(1)], [0], [r]), r,
                                     1.0 if src == Source.REFERENCE else w, src))
    return ReturnBatch(records, n_reference, n - n_reference)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
