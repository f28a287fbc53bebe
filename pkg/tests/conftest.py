import pytest

from tesopt import load_config, pipeline

from helpers import CONFIGS


@pytest.fixture(scope="session")
def tangential_cfg():
    return load_config(CONFIGS / "tangential.toml")


@pytest.fixture(scope="session")
def phantom(tangential_cfg):
    """The shipped 7-ring disk at 1.5 mm with 16 electrodes (B per mA)."""
    return pipeline.build_phantom(tangential_cfg)
