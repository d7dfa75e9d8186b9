import numpy as np
import pytest

from qgattack import data, grad_core, training
from qgattack.attacks import AttackConfig
from qgattack.grad_core import Model, ModelSpec


def random_mlp(rng, dims, bias_scale=0.1):
    weights = [rng.normal(0, 1 / np.sqrt(a), size=(b, a)) for a, b in zip(dims, dims[1:])]
    biases = [rng.normal(0, bias_scale, size=b) for b in dims[1:]]
    return grad_core.model_from_arrays(weights, biases)


def central_fd(f, x, h=1e-5):
    """Central differences of scalar ``f`` at every component of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    flat, g = x.ravel(), out.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    """Small synthetic train/test split shared by slower tests."""
    ds = data.synth_dataset(2000, side=8, num_classes=10, seed=0)
    return data.train_test_split(ds, 0.25, seed=1)


@pytest.fixture(scope="session")
def standard_model(blobs):
    train, _ = blobs
    cfg = training.TrainConfig(epochs=15, batch_size=64, learning_rate=0.05, seed=0)
    return training.train_standard(train, ModelSpec(64, (64,), 10), cfg).model


@pytest.fixture(scope="session")
def robust_model(blobs):
    """Adversarially trained at eps = 0.3 with a 7-step PGD inner solver."""
    train, _ = blobs
    inner = AttackConfig(0.3, 0.075, steps=7)
    cfg = training.TrainConfig(
        epochs=15, batch_size=64, learning_rate=0.05, seed=0,
        adversarial=training.AdversarialSpec(inner),
    )
    return training.train_adversarial(train, ModelSpec(64, (64,), 10), cfg).model
