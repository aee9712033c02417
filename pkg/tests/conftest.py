import numpy as np
import pytest

from ghzstab.config import load_scenario


@pytest.fixture(scope="session")
def scenario_a():
    return load_scenario("scenario_a")


@pytest.fixture(scope="session")
def scenario_b():
    return load_scenario("scenario_b")


@pytest.fixture(scope="session")
def model_a(scenario_a):
    return scenario_a.build_model()


@pytest.fixture(scope="session")
def model_b(scenario_b):
    return scenario_b.build_model()


@pytest.fixture(scope="session")
def basis_a(model_a):
    return model_a.basis()


@pytest.fixture
def rng():
    return np.random.default_rng(2718)
