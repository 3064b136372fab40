"""
Fixtures compartidas del suite de pruebas
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import ExperimentConfig, ModelConfig
from src.data_generator import gen_concealed_shapes
from src.tensor import reset_graph


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Ejecuta también las pruebas lentas")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: prueba lenta (requiere --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="usar --runslow para ejecutar")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def fresh_graph():
    reset_graph()
    yield
    reset_graph()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_model_cfg():
    """Modelo enhanced mínimo: grilla 4x4 y luego 2x2"""
    return ModelConfig(
        image_size=16, patch_size=4, dims=[8, 16], depths=[1, 1], heads=[2, 2],
        mlp_ratio=1.0, acp={'n_lpu': 1}, cat={'num_concepts': 4},
    )


@pytest.fixture(scope="session")
def tiny_samples():
    return gen_concealed_shapes(24, height=16, width=16, difficulty=0.2, seed=3)


@pytest.fixture
def tiny_experiment(tiny_model_cfg, tmp_path):
    def build(**train_overrides) -> ExperimentConfig:
        train = {
            'seed': 0, 'steps': 4, 'batch_size': 4, 'lr': 1e-3,
            'eval_every': 0, 'checkpoint_every': 0, 'out_dir': str(tmp_path / 'run'),
        }
        train.update(train_overrides)
        return ExperimentConfig.model_validate({
            'model': tiny_model_cfg.model_dump(),
            'data': {'n_train': 24, 'n_test': 8, 'image_size': 16, 'seed': 3},
            'train': train,
        })
    return build
