import numpy as np
import pytest

import wolhash as w


@pytest.fixture(scope="session")
def planted_small():
    """Noise-free planted dataset that a linear model separates exactly."""
    return w.generate_synthetic(num_classes=16, input_dim=128, num_examples=512, classes_per_example=1, noise=0.0, seed=11)


@pytest.fixture(scope="session")
def trained_small(planted_small):
    model = w.train(planted_small, w.TrainConfig(hidden=16, epochs=15, lr=1.0, batch=64, seed=0))
    return model


def random_model(rng, input_dim, hidden, m):
    E = rng.normal(size=(input_dim, hidden))
    W = rng.normal(size=(m, hidden))
    b = rng.normal(size=m)
    return w.BaseModel(E, W, b)


def random_sparse_vector(rng, dim, nnz):
    idx = np.sort(rng.choice(dim, size=nnz, replace=False))
    vals = rng.normal(size=nnz)
    vals[vals == 0] = 1.0
    return w.SparseVector(idx, vals, dim)
