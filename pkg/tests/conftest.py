import pytest
import numpy as np
from divdr.autodiff import get_tape
from divdr.data import DatasetSpec, generate
from divdr.lattice import LatticeConfig
from divdr.loss import LossWeights
from divdr.trainer import TrainConfig


@pytest.fixture(autouse=True)
def clean_tape():
    get_tape().clear()
    yield
    get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_lattice():
    return LatticeConfig(num_layers=2, num_scales=2, channels=4, input_size=(8, 8), gate_hidden=4)


@pytest.fixture
def small_spec():
    return DatasetSpec(
        n_train=12,
        n_val=6,
        radius_small=(1.0, 2.0),
        radius_large=(4.0, 6.0),
        noise_std=0.05,
        seed=3,
        size=16,
    )


@pytest.fixture
def small_lattice():
    return LatticeConfig(num_layers=2, num_scales=2, channels=4, input_size=(16, 16), gate_hidden=4)


@pytest.fixture
def small_train_config():
    return TrainConfig(
        total_steps=6,
        batch_size=4,
        kmeans_interval=2,
        warmup_steps=2,
        eval_interval=3,
        K=2,
        seed=5,
        weights=LossWeights(lambda1=0.1, lambda2=0.5, alpha=0.5),
    )


@pytest.fixture
def x_train(small_spec):
    return generate(small_spec, "X", "train")


@pytest.fixture
def x_val(small_spec):
    return generate(small_spec, "X", "val")
