import numpy as np
import pytest

from hjbvi.diffusion import ou_spec
from hjbvi.fnclass import BasisSpec, monomial, monomials_up_to, rbf_grid, separable_model
from hjbvi.oracle import manufactured_problem
from hjbvi.rewards import ConstantReward, LinearTerminal, RewardSpec, TwoPointNoise


@pytest.fixture(scope="session")
def ou():
    """Stationary scalar OU: theta=1, sigma^2=2, T=1, X_0 ~ N(0, 1)."""
    return ou_spec(1.0, 2.0, 1.0, init_var=1.0)


@pytest.fixture(scope="session")
def ou_reward():
    return RewardSpec(ConstantReward(-1.0), LinearTerminal(0.5), normalized=True)


@pytest.fixture(scope="session")
def basis():
    return BasisSpec(3, tuple(monomials_up_to(1, 2) + rbf_grid(-2.5, 2.5, 8, 0.9)), 1, 1.0)


@pytest.fixture(scope="session")
def rbf_basis():
    return BasisSpec(3, tuple([monomial([0])] + rbf_grid(-2.5, 2.5, 8, 0.9)), 1, 1.0)


@pytest.fixture(scope="session")
def manufactured(ou, rbf_basis):
    weights = [1.0, 0.1, -0.08, 0.12, 0.05, -0.1, 0.15, -0.05, 0.1]
    fstar = separable_model(rbf_basis, [1.0, 1.5, 1.125, 0.5625], weights, 1e3)
    reward = manufactured_problem(fstar, ou, 1.0, noise=TwoPointNoise(0.5))
    return fstar, reward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
