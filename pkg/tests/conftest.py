import numpy as np
import pytest

from app.data import Dataset, load_default_iris
from app.models import ExperimentConfig, NoiseSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def iris():
    return load_default_iris()


@pytest.fixture
def synthetic_dataset():
    """20 positive 4-feature examples; label 1 when the last two features dominate."""
    rng = np.random.default_rng(7)
    features = rng.uniform(0.1, 1.0, size=(20, 4))
    labels = (features[:, 2:].sum(axis=1) > features[:, :2].sum(axis=1)).astype(int)
    return Dataset(features, labels)


@pytest.fixture
def quick_config():
    """Few analytic iterations, enough to exercise the training loop."""
    return ExperimentConfig(
        name="quick",
        nodes=2,
        shots=None,
        noise=NoiseSpec(mu=0.0),
        max_iterations=3,
        repetitions=2,
        final_gradient=False,
    )


@pytest.fixture
def database(tmp_path, monkeypatch):
    from app import database

    monkeypatch.setattr(database, "DATABASE_PATH", tmp_path / "runs.db")
    database.init_db()
    return database.DATABASE_PATH
