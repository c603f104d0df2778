"""
Shared fixtures: a small two-domain suite, toy models, and the command line.
"""

import numpy as np
import pytest
from click.testing import CliRunner

from dasnlab import create_cli
from dasnlab.config import TestingConfig, TrainConfig
from dasnlab.services.model import DasnConfig, DasnModel
from dasnlab.services.synthdata import build_factor_model, generate_domain, merge_domains

TOY_COUNTS = {"A": (3, 2, 2), "B": (2, 1, 3)}


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run the reference replication"
    )
    parser.addoption(
        "--record-golden",
        action="store_true",
        default=False,
        help="rewrite the pinned reference accuracies from this run",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-task reference runs, enabled by --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def factor_model():
    return build_factor_model(7, input_dim=6, domain_counts=TOY_COUNTS)


@pytest.fixture
def toy_dataset(factor_model):
    """20 samples over two domains: 5 identities, 3 environments, 5 sensors."""
    return merge_domains([
        generate_domain(factor_model, "A", samples_per_identity=4),
        generate_domain(factor_model, "B", samples_per_identity=4),
    ])


@pytest.fixture
def make_model():
    def _make(factors=("identity",), input_dim=4, feature_dim=3, hidden_dim=4, seed=0,
              class_counts=None):
        counts = class_counts or {k: 3 for k in factors}
        config = DasnConfig(
            input_dim=input_dim,
            feature_dim=feature_dim,
            hidden_dim=hidden_dim,
            factors=tuple(factors),
            class_counts=counts,
        )
        return DasnModel.initialize(config, seed)

    return _make


@pytest.fixture
def train_config():
    def _config(**kwargs):
        defaults = dict(mode="DASN", factors=["identity", "environment", "sensor"],
                        lr=1e-2, batch_size=8, epochs=2, seed=3)
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    return _config


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def cli():
    return create_cli(TestingConfig)


@pytest.fixture
def runner():
    return CliRunner()
