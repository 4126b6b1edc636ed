"""
Pytest configuration and shared fixtures for tests.
"""

import csv
import pytest
from pathlib import Path
from typing import Dict, List

import numpy as np

# Add parent directory to path for imports
import sys
sys.path.insert(0, str(Path(__file__).parent.parent))

from jamshield.autocm import AutoCmConfig
from jamshield.schema import default_manifest
from jamshield.simulator import mixed_dataset


@pytest.fixture(scope="session")
def manifest():
    """The bundled 40-feature manifest."""
    return default_manifest()


@pytest.fixture
def blobs():
    """Two well-separated Gaussian clouds at -2 and +2 in 4-D, 40 points each."""
    rng = np.random.default_rng(7)
    X = np.vstack([rng.normal(-2.0, 0.5, size=(40, 4)), rng.normal(2.0, 0.5, size=(40, 4))])
    y = np.array([0] * 40 + [1] * 40)
    return X, y


@pytest.fixture(scope="session")
def small_dataset(manifest):
    """Simulator stream with 300 benign and 150 attack ticks."""
    return mixed_dataset(manifest, benign_ticks=300, attack_ticks=150, seed=42)


@pytest.fixture
def fast_config():
    """AutoCM settings small enough for unit tests."""
    return AutoCmConfig(
        window_size=40,
        min_buffer=200,
        buffer_capacity=800,
        snapshot_delay=5,
        k_features=10,
        folds=3,
        learners=("knn", "dt"),
    )


@pytest.fixture
def temp_csv_file(tmp_path):
    """Create a temporary CSV file for testing."""
    def _create_csv(content: List[Dict[str, str]], fieldnames: List[str], name: str = "test.csv"):
        file_path = tmp_path / name
        with open(file_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(content)
        return file_path
    return _create_csv
