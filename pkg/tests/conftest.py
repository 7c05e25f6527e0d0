import os
from pathlib import Path

import numpy as np
import pytest

from certlab.network import from_linears

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"
DATA = Path(os.environ.get("CERTLAB_DATA", ROOT / "data"))


def have_mnist() -> bool:
    return (DATA / "train-images-idx3-ubyte.gz").exists() or (DATA / "train-images-idx3-ubyte").exists()


needs_mnist = pytest.mark.skipif(not have_mnist(), reason="MNIST IDX files not in the data directory")


@pytest.fixture
def toy_net():
    """Two-input worked example: W1 = W3 = [[1, 1], [1, -1]], zero biases."""
    W = np.array([[1.0, 1.0], [1.0, -1.0]])
    return from_linears([(W, np.zeros(2)), (W.copy(), np.zeros(2))])


@pytest.fixture
def data_dir():
    return DATA


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
