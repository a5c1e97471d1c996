import sys

import numpy as np
import pytest

from embedding_atlas.spectral import analyze, jacobian_at
from embedding_atlas.synthetic import make_image
from embedding_atlas.tensor import Rng
from embedding_atlas.vit import REFERENCE_CONFIG, init_weights, model_fn


@pytest.fixture(scope="session")
def config():
    return REFERENCE_CONFIG


@pytest.fixture(scope="session")
def weights(config):
    return init_weights(config, Rng(0))


@pytest.fixture(scope="session")
def fn(weights, config):
    return model_fn(weights, config)


@pytest.fixture(scope="session")
def x0(config):
    return make_image("stripes", 11, config.image_size, config.channels).reshape(-1)


@pytest.fixture(scope="session")
def target_img(config):
    return make_image("checkers", 12, config.image_size, config.channels).reshape(-1)


@pytest.fixture(scope="session")
def jac(weights, config, x0):
    return jacobian_at(weights, config, x0)


@pytest.fixture(scope="session")
def svd(weights, config, x0):
    return analyze(weights, config, x0)


def random_unit(rng, m):
    g = rng.normal(m)
    return g / np.linalg.norm(g)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
