"""Root conftest.py for shared test fixtures and configuration."""

import os

# Run stores always live in the test's output directory
os.environ.pop("DATABASE_URL", None)
os.environ["COMPUTE_RESIDUAL"] = "True"

import numpy as np  # noqa: E402  pylint: disable=wrong-import-position
import pytest  # noqa: E402  pylint: disable=wrong-import-position

from src.db.session import database_url_for  # noqa: E402  pylint: disable=wrong-import-position
from src.schemas.interactions import InteractionMatrix, SplitProtocol  # noqa: E402  pylint: disable=wrong-import-position
from tests.utils.factories import (  # noqa: E402  pylint: disable=wrong-import-position
    make_bundle,
    random_interactions,
    skewed_interactions,
    write_event_log,
)


@pytest.fixture
def tiny_matrix() -> InteractionMatrix:
    """4 users x 5 items, every degree >= 1."""
    return InteractionMatrix.from_dense(np.array([
        [1, 1, 0, 0, 1],
        [1, 0, 1, 0, 0],
        [0, 1, 1, 1, 0],
        [1, 1, 0, 1, 1],
    ]))


@pytest.fixture
def random_matrix() -> InteractionMatrix:
    """60 x 25 uniform random matrix, user degree >= 2."""
    return random_interactions(60, 25, density=0.25, seed=7, min_user_degree=2)


@pytest.fixture
def skewed_matrix() -> InteractionMatrix:
    """400 x 60 matrix with power-law item popularity."""
    return skewed_interactions(400, 60, seed=11)


@pytest.fixture
def strong_bundle(skewed_matrix):
    """Strong-generalization bundle with validation and test users."""
    return make_bundle(skewed_matrix, SplitProtocol.STRONG, seed=3)


@pytest.fixture
def weak_bundle(skewed_matrix):
    """Weak-generalization bundle with validation and test held-out items."""
    return make_bundle(skewed_matrix, SplitProtocol.WEAK, seed=3)


@pytest.fixture
def run_store(tmp_path) -> str:
    """SQLite run store inside the test's temporary directory."""
    return database_url_for(tmp_path)


@pytest.fixture
def event_log(tmp_path):
    """Synthetic tab-separated event log (60 users, 40 items)."""
    return write_event_log(tmp_path / "events.tsv", seed=5)
