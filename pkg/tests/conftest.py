import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from crewfc import QuantizedLayer  # noqa: E402


def random_layer(rng, n, m, max_uw=None, bias=True):
    """int8 layer; ``max_uw`` caps the distinct values per row."""
    if max_uw is None:
        W = rng.integers(-128, 128, size=(n, m))
    else:
        pools = [rng.choice(256, size=int(rng.integers(1, max_uw + 1)), replace=False) - 128 for _ in range(n)]
        W = np.stack([p[rng.integers(0, p.size, size=m)] for p in pools])
    b = rng.integers(-(1 << 20), 1 << 20, size=m) if bias else np.zeros(m, dtype=np.int64)
    return QuantizedLayer(W, b, scale=0.01, q=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_layer(rng):
    return random_layer(rng, 37, 53, max_uw=12)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, _ in mod.CHECKS:
        if name in mod.RESULTS:
            terminalreporter.write_line(mod.RESULTS[name])
