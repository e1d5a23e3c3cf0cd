import numpy as np
import pytest

from fedsim.losses import AgentShard, Dataset, generate_regression_dataset


def random_shard(rng, n_samples=6, dim=4, pm_one_labels=False):
    features = rng.standard_normal((n_samples, dim))
    if pm_one_labels:
        labels = rng.choice([-1.0, 1.0], size=n_samples)
    else:
        labels = rng.standard_normal(n_samples)
    return AgentShard(features, labels)


def random_dataset(rng, n_agents=3, n_samples=4, dim=3, pm_one_labels=False):
    shards = tuple(
        random_shard(rng, n_samples, dim, pm_one_labels) for _ in range(n_agents)
    )
    return Dataset(shards, dim)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def noiseless():
    """Small exactly-solvable regression problem: (dataset, true parameter)."""
    gen = np.random.default_rng(7)
    return generate_regression_dataset(3, 8, 3, 0.0, gen)
