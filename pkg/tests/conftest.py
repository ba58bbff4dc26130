import os
from pathlib import Path

import numpy as np
import pytest

from wvae import idx

DEFAULT_ROOT = Path("/root/data/mnist")


def mnist_root() -> Path | None:
    root = Path(os.environ.get(idx.DATA_ROOT_ENV, DEFAULT_ROOT))
    files = ("train-images-idx3-ubyte", "t10k-images-idx3-ubyte")
    if all((root / f).exists() or (root / (f + ".gz")).exists() for f in files):
        return root
    return None


@pytest.fixture(scope="session")
def data_root():
    root = mnist_root()
    if root is None:
        pytest.skip(f"MNIST not found; set ${idx.DATA_ROOT_ENV}")
    return root


@pytest.fixture(scope="session")
def mnist_train(data_root):
    return idx.load_mnist("train", data_root)


@pytest.fixture(scope="session")
def mnist_test(data_root):
    return idx.load_mnist("test", data_root)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
