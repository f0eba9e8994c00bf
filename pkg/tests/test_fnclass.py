import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hjbvi.fnclass import (BasisSpec, ValueModel, features, load_model, monomial, monomials_up_to, project_ball,
                           rbf, rbf_grid, save_model, separable_model)


@pytest.fixture(scope="module")
def basis2d():
    return BasisSpec(2, tuple(monomials_up_to(2, 2) + [rbf([0.5, -0.5], 0.7)]), 2, 2.0)


def test_monomial_enumeration():
    assert [m["powers"] for m in monomials_up_to(2, 1)] == [[0, 0], [0, 1], [1, 0]]
    assert len(monomials_up_to(2, 2)) == 6


class TestBasis:
    def test_sizes(self, basis2d):
        assert basis2d.n_spatial == 7 and basis2d.n_features == 21

    @pytest.mark.parametrize("bad", [rbf([0.0], 1.0), monomial([1]), {"kind": "spline"}])
    def test_rejects_bad_descriptors(self, bad):
        with pytest.raises(ValueError):
            BasisSpec(1, (bad,), 2, 1.0)

    def test_roundtrip(self, basis2d):
        assert BasisSpec.from_dict(basis2d.to_dict()) == basis2d


class TestFeatures:
    def test_constant_feature(self):
        b = BasisSpec(0, (monomial([0]),), 1, 1.0)
        fb = features(b, np.array([0.2, 0.9]), np.array([[1.0], [-3.0]]))
        np.testing.assert_allclose(fb.phi, 1.0)
        np.testing.assert_allclose(fb.grad, 0.0)
        np.testing.assert_allclose(fb.dphi_dt, 0.0)

    def test_legendre_time_factor(self):
        b = BasisSpec(2, (monomial([0]),), 1, 2.0)
        # s = t - 1 on [0, 2]; P2(s) = (3 s^2 - 1) / 2
        fb = features(b, 1.5, np.zeros((1, 1)))
        np.testing.assert_allclose(fb.phi[0], [1.0, 0.5, (3 * 0.25 - 1) / 2])
        np.testing.assert_allclose(fb.dphi_dt[0], [0.0, 1.0, 3 * 0.5])

    def test_derivatives_match_finite_differences(self, basis2d):
        rng = np.random.default_rng(0)
        t, x = 0.7, rng.normal(size=(4, 2))
        fb = features(basis2d, t, x)
        h = 1e-5
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd = (features(basis2d, t, x + e).phi - features(basis2d, t, x - e).phi) / (2 * h)
            np.testing.assert_allclose(fb.grad[:, :, i], fd, atol=1e-7)
            fdg = (features(basis2d, t, x + e).grad - features(basis2d, t, x - e).grad) / (2 * h)
            np.testing.assert_allclose(fb.hess[:, :, :, i], fdg, atol=1e-6)
        fdt = (features(basis2d, t + h, x).phi - features(basis2d, t - h, x).phi) / (2 * h)
        np.testing.assert_allclose(fb.dphi_dt, fdt, atol=1e-7)

    def test_hessian_symmetric(self, basis2d):
        fb = features(basis2d, 0.3, np.random.default_rng(1).normal(size=(3, 2)))
        np.testing.assert_allclose(fb.hess, np.swapaxes(fb.hess, 2, 3))

    def test_rejects_time_outside_horizon(self, basis2d):
        with pytest.raises(ValueError):
            features(basis2d, 2.5, np.zeros((1, 2)))


class TestModel:
    def test_ball_enforced(self, basis2d):
        with pytest.raises(ValueError, match="exceeds ball radius"):
            ValueModel(basis2d, np.ones(21), 1.0)

    def test_theta_read_only(self, basis2d):
        m = ValueModel(basis2d, np.zeros(21), 1.0)
        with pytest.raises(ValueError):
            m.theta[0] = 1.0

    def test_save_load(self, basis2d, tmp_path):
        m = ValueModel(basis2d, np.linspace(-0.1, 0.1, 21), 5.0)
        save_model(m, tmp_path / "m.json")
        back = load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(back.theta, m.theta)
        assert back.basis == m.basis and back.ball_radius == 5.0

    def test_separable_model(self):
        b = BasisSpec(3, tuple(rbf_grid(-1, 1, 3, 0.5)), 1, 1.0)
        w = [1.0, -0.5, 0.25]
        m = separable_model(b, [1.0, 1.5, 1.125, 0.5625], w, 100.0)
        t, x = 0.37, np.array([[0.2], [-0.8]])
        a = 1 + 1.5 * t + 1.125 * t ** 2 + 0.5625 * t ** 3
        psi = np.exp(-((x - np.array([-1.0, 0.0, 1.0])) ** 2) / (2 * 0.25)) @ np.array(w)
        np.testing.assert_allclose(m.value(t, x), a * psi, rtol=1e-12)

    def test_separable_degree_check(self):
        b = BasisSpec(1, (monomial([0]),), 1, 1.0)
        with pytest.raises(ValueError, match="degree"):
            separable_model(b, [1, 1, 1], [1.0], 10.0)


@settings(max_examples=100, deadline=None)
@given(theta=arrays(float, 6, elements=st.floats(-1e3, 1e3)), rho=st.floats(1e-3, 1e3))
def test_projection_properties(theta, rho):
    out = project_ball(theta, rho)
    assert np.linalg.norm(out) <= rho * (1 + 1e-12)
    if np.linalg.norm(theta) <= rho:
        np.testing.assert_array_equal(out, theta)
    np.testing.assert_allclose(project_ball(out, rho), out)


def test_projection_example():
    np.testing.assert_allclose(project_ball([3.0, 4.0], 1.0), [0.6, 0.8])


def test_basis_pickles_and_deepcopies(basis2d):
    import copy
    import pickle
    assert pickle.loads(pickle.dumps(basis2d)) == basis2d
    assert copy.deepcopy(basis2d) == basis2d
