"""Shared fixtures: a tiny phantom dataset on disk and small models."""

from pathlib import Path

import numpy as np
import pytest

from latent_gate.models import AEModel, ArchSpec, ModelKind, build_model
from latent_gate.synth_data import Dataset, GeneratorConfig, build_dataset, load_dataset

TINY_SPLITS = {"n_train": 16, "n_test_normal": 8, "n_test_abnormal": 8}


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--run-slow", action="store_true", default=False, help="run full training tests"
    )


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """16 train, 8 normal and 8 abnormal test phantoms."""
    root = tmp_path_factory.mktemp("tiny_data")
    build_dataset(GeneratorConfig(seed=3), out_dir=root, **TINY_SPLITS)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir: Path) -> Dataset:
    return load_dataset(tiny_dataset_dir)


@pytest.fixture(scope="session")
def moderate_dataset(tmp_path_factory: pytest.TempPathFactory) -> Dataset:
    """256 train, 64 normal and 64 abnormal test phantoms for short training runs."""
    root = tmp_path_factory.mktemp("moderate_data")
    build_dataset(
        GeneratorConfig(seed=17), out_dir=root, n_train=256, n_test_normal=64, n_test_abnormal=64
    )
    return load_dataset(root)


@pytest.fixture
def small_spec() -> ArchSpec:
    """64×64 input with narrow channels so forward passes stay fast."""
    return ArchSpec(
        latent_dim=4,
        bottleneck_width=16,
        encoder_channels=(4, 4, 4, 4),
        decoder_channels=(4, 4, 4, 1),
    )


@pytest.fixture
def small_ae(small_spec: ArchSpec) -> AEModel:
    return build_model(ModelKind.AE, small_spec, seed=5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
