import os
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_dir():
    """Directory with the MNIST IDX files, or skip."""
    from insidebias.harness.config import data_dir
    from insidebias.harness.mnist import have_mnist

    for candidate in (os.environ.get("MNIST_DIR"), data_dir() / "mnist"):
        if candidate and have_mnist(candidate):
            return Path(candidate)
    pytest.skip("MNIST not available; run `insidebias fetch-mnist`")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
