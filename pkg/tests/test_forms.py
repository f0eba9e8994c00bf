import numpy as np
import pytest

from hjbvi.dataset import generate_dataset
from hjbvi.diffusion import simulate_paths
from hjbvi.fnclass import BasisSpec, ValueModel, monomial
from hjbvi.forms import (QuadratureRule, assemble, bilinear_terms, empirical_bilinear, population_context, potential,
                         quadrature_bilinear, quadrature_energy)


@pytest.fixture(scope="module")
def const_basis():
    return BasisSpec(0, (monomial([0]),), 1, 1.0)


@pytest.fixture(scope="module")
def gauss(ou):
    return QuadratureRule.ou_gauss(ou)


@pytest.fixture(scope="module")
def data(ou, ou_reward):
    return generate_dataset(ou, ou_reward, 300, 5, 0.01, 3, alpha=1.0)


@pytest.mark.parametrize("scaling, expected", [("alpha_r", -4.0), ("r_over_alpha", -1.0)])
def test_potential(scaling, expected):
    assert potential(np.array([-2.0]), 2.0, scaling)[0] == expected


def test_potential_unknown():
    with pytest.raises(ValueError):
        potential(np.zeros(1), 1.0, "other")


class TestConstantFunction:
    """For f = g = 1 the energy is 2 + T and, with r = -1, alpha = 1, B[1, 1] = 1 + T."""

    def test_empirical(self, data, const_basis, ou):
        ctx = assemble(data, const_basis, ou, 1.0)
        np.testing.assert_allclose(ctx.gram_E, [[3.0]])
        assert empirical_bilinear(ctx, np.zeros(1), [1.0]) == pytest.approx(np.mean(np.exp(data.Y)))
        np.testing.assert_allclose(ctx.M, [[2.0]])

    def test_population(self, gauss, const_basis, ou, ou_reward):
        one = ValueModel(const_basis, [1.0], 10.0)
        assert quadrature_energy(one, one, gauss) == pytest.approx(3.0, rel=1e-12)
        assert quadrature_bilinear(one, one, ou, ou_reward, 1.0, gauss) == pytest.approx(2.0, rel=1e-12)
        ctx = population_context(const_basis, ou, ou_reward, 1.0, gauss)
        np.testing.assert_allclose(ctx.M, [[2.0]], rtol=1e-12)


class TestQuadrature:
    def test_gauss_second_moment(self, gauss):
        # stationary OU with unit variance: int_0^1 E[X_t^2] dt = 1
        assert np.sum(gauss.w * gauss.x[:, 0] ** 2) == pytest.approx(1.0, rel=1e-10)
        assert np.sum(gauss.wT * gauss.xT[:, 0] ** 4) == pytest.approx(3.0, rel=1e-10)

    def test_path_cloud_weights(self, ou):
        rule = QuadratureRule.from_paths(simulate_paths(ou, 50, 0.01, 0), stride=5)
        assert np.sum(rule.w) == pytest.approx(1.0)
        assert np.sum(rule.w0) == pytest.approx(1.0)

    def test_stride_must_divide(self, ou):
        with pytest.raises(ValueError, match="stride"):
            QuadratureRule.from_paths(simulate_paths(ou, 5, 0.01, 0), stride=3)

    def test_gauss_requires_ou(self, ou):
        from dataclasses import replace
        from hjbvi.diffusion import PolynomialDrift
        with pytest.raises(ValueError, match="OU"):
            QuadratureRule.ou_gauss(replace(ou, drift=PolynomialDrift(1, [(0, (1,), -1.0)])))


class TestPopulationMatrix:
    def test_matches_direct_quadrature(self, basis, ou, ou_reward, gauss):
        ctx = population_context(basis, ou, ou_reward, 1.0, gauss)
        rng = np.random.default_rng(0)
        tf, tg = rng.normal(size=(2, basis.n_features)) * 0.1
        f, g = ValueModel(basis, tf, 100.0), ValueModel(basis, tg, 100.0)
        assert quadrature_bilinear(f, g, ou, ou_reward, 1.0, gauss) == pytest.approx(tg @ ctx.M @ tf, rel=1e-9)
        assert quadrature_energy(f, g, gauss) == pytest.approx(tg @ ctx.gram_E @ tf, rel=1e-9)

    def test_gram_positive_definite(self, basis, ou, ou_reward, gauss):
        ctx = population_context(basis, ou, ou_reward, 1.0, gauss)
        assert np.linalg.eigvalsh(ctx.gram_E)[0] > 0

    def test_coercive_on_ou(self, basis, ou, ou_reward, gauss):
        # B[f, f] >= min(alpha, lambda_min, 1) / 2 * E(f) for the closed-form setting
        ctx = population_context(basis, ou, ou_reward, 1.0, gauss)
        sym = 0.5 * (ctx.M + ctx.M.T)
        lam = np.linalg.eigvalsh(np.linalg.solve(np.linalg.cholesky(ctx.gram_E),
                                                 np.linalg.solve(np.linalg.cholesky(ctx.gram_E), sym).T))
        assert lam[0] >= 0.5 - 1e-8


class TestManufacturedIdentity:
    """At the true solution only the terminal pairing survives: B[f*, g] = E[exp(y / alpha) g_T]."""

    def test_population(self, manufactured, ou, rbf_basis, gauss):
        fstar, reward = manufactured
        rng = np.random.default_rng(1)
        for _ in range(3):
            g = ValueModel(rbf_basis, rng.normal(size=rbf_basis.n_features), 1e3)
            target = np.sum(gauss.wT * np.exp(reward.terminal(gauss.xT)) * g.value(1.0, gauss.xT))
            assert quadrature_bilinear(fstar, g, ou, reward, 1.0, gauss) == pytest.approx(target, rel=1e-9)

    def test_empirical_unbiased(self, manufactured, ou, rbf_basis):
        fstar, reward = manufactured
        ds = generate_dataset(ou, reward, 4000, 10, 0.01, 21, alpha=1.0)
        ctx = assemble(ds, rbf_basis, ou, 1.0)
        g = np.random.default_rng(2).normal(size=rbf_basis.n_features)
        term, inter = bilinear_terms(ctx, fstar.theta, g)
        per_path = (term + inter.sum(axis=1)) * ds.n
        value = empirical_bilinear(ctx, fstar, g)
        assert value == pytest.approx(per_path.mean())
        se = per_path.std(ddof=1) / np.sqrt(ds.n)
        assert abs(value) < 4 * se
        assert se < 0.05 * np.abs(per_path).mean()


def test_assemble_dimension_mismatch(data, ou):
    b2 = BasisSpec(0, (monomial([0, 0]),), 2, 1.0)
    with pytest.raises(ValueError, match="dimension"):
        assemble(data, b2, ou, 1.0)
