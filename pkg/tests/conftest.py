import numpy as np
import pytest

from condreuse.assembly import ConditionInput, build_scene, synthetic_raster
from condreuse.pipeline import ModelConfig, init_model

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def toy_config():
    return ModelConfig(layers=4, d=64, heads=4, mlp_ratio=4, patch=2, seed=42)


@pytest.fixture(scope="session")
def toy_model(toy_config):
    return init_model(toy_config)


@pytest.fixture(scope="session")
def toy_scene(toy_config):
    """16x16 noisy grid, 8 text tokens, one aligned condition compressed a=2 to 8x8 tokens."""
    cond = ConditionInput(synthetic_raster(32, 32, seed=1), a=2)
    return build_scene(toy_config, 32, 32, [cond], text_count=8, seed=42)


@pytest.fixture(scope="session")
def small_config():
    return ModelConfig(layers=2, d=16, heads=2, mlp_ratio=2, patch=2, seed=3)


@pytest.fixture(scope="session")
def small_scene(small_config):
    conds = [ConditionInput(synthetic_raster(8, 8, seed=1), a=2), ConditionInput(synthetic_raster(8, 8, seed=2))]
    return build_scene(small_config, 8, 8, conds, text_count=3, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
