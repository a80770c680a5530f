import pytest
from hypothesis import settings

from boltshare.joint import BoltParams, reference_joint

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def cfg():
    return reference_joint()


@pytest.fixture
def identical():
    return BoltParams((0.1, 0.1, 0.1), (7.0, 7.0, 7.0))


@pytest.fixture
def random_case():
    return BoltParams((1.04, 0.63, 0.12), (8.41, 9.25, 5.90))


@pytest.fixture(scope="session")
def full_data(cfg):
    """The 1000-sample seeded dataset, split 70/10/20."""
    import os

    from boltshare.surrogate import generate_dataset

    return generate_dataset(cfg, 1000, seed=0, jobs=min(8, os.cpu_count() or 1)).split(0)


@pytest.fixture(scope="session")
def full_fit(full_data):
    from boltshare.surrogate import train

    return train(full_data, seed=0)
