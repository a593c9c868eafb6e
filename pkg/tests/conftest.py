from pathlib import Path

import numpy as np
import pytest

from parsevalnet.graph import Batch
from parsevalnet.rng import make_rng

DATA_DIR = Path(__file__).resolve().parent.parent / "data" / "mnist10k"


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def mnist():
    if not DATA_DIR.exists():
        pytest.skip("vendored MNIST sample not present (run scripts/prepare_mnist.py)")
    from parsevalnet.data import load_dataset

    return load_dataset(DATA_DIR, "train"), load_dataset(DATA_DIR, "test")


@pytest.fixture
def blobs():
    """Small separable 3-class problem for fast end-to-end tests."""
    r = make_rng(99)
    centers = np.array([[2.0, 0, 0, 0], [0, 2.0, 0, 0], [0, 0, 2.0, 0]])
    labels = r.integers(0, 3, 240)
    x = centers[labels] + 0.25 * r.standard_normal((240, 4))
    data = Batch(x, labels)
    return data.subset(slice(0, 180)), data.subset(slice(180, 240))
