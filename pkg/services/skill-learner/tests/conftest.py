"""
Общие фикстуры тестов сервиса обучения навыков.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Те же пути, что и в main.py
current_dir = Path(__file__).parent.parent
services_dir = current_dir.parent
sys.path.insert(0, str(services_dir))
sys.path.insert(0, str(current_dir))

from learner.gmm import GmmModel  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="Запускать медленные тесты на полном корпусе")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: медленный тест (запуск с --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="нужен флаг --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    """Хорошо обусловленная случайная SPD-матрица"""
    a = rng.normal(size=(dim, dim)) / np.sqrt(dim)
    return scale * (a @ a.T + 0.5 * np.eye(dim))


def random_model(rng: np.random.Generator, n_components: int, input_dim: int = 40,
                 output_dim: int = 10, spread: float = 3.0, unit_quaternions: bool = False) -> GmmModel:
    """
    Случайная смесь: средние разнесены на spread, ковариации SPD.

    unit_quaternions - нормировать кватернионную часть средних выхода.
    """
    dim = input_dim + output_dim
    means = rng.normal(0.0, spread, size=(n_components, dim))
    if unit_quaternions:
        q = means[:, input_dim:input_dim + 4]
        means[:, input_dim:input_dim + 4] = q / np.linalg.norm(q, axis=1, keepdims=True)
    covs = [random_spd(rng, dim, scale=0.5) for _ in range(n_components)]
    weights = rng.uniform(0.5, 1.5, size=n_components)
    return GmmModel.from_parameters(weights, means, covs, input_dim=input_dim, output_dim=output_dim)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def spd(rng):
    def make(dim: int, scale: float = 1.0) -> np.ndarray:
        return random_spd(rng, dim, scale)
    return make


@pytest.fixture
def model_factory(rng):
    def make(n_components: int, **kwargs) -> GmmModel:
        return random_model(rng, n_components, **kwargs)
    return make
