import numpy as np
import pytest

from hjbvi.dataset import generate_dataset
from hjbvi.diffusion import drift_eval
from hjbvi.fnclass import BasisSpec, ValueModel, monomial
from hjbvi.oracle import ClosedFormOU
from hjbvi.policy import (ComposedPolicy, PolicyHandle, classifier_guidance_fit, estimate_objective,
                          kl_path_estimate, mirror_descent_step, policy_eval, ridge_model)

KL_STAR = 0.125 * (1 - np.exp(-2.0))  # 0.5 int_0^1 sigma^2 c^2 exp(-2 theta (1 - t)) dt / alpha^2


@pytest.fixture(scope="module")
def cf(ou, ou_reward):
    return ClosedFormOU.from_problem(ou, ou_reward, 1.0)


@pytest.fixture(scope="module")
def star(cf, ou):
    return PolicyHandle("closed_form", cf, ou, 1.0)


class TestHandle:
    def test_plug_in_formula(self, star, cf, ou):
        x = np.array([[-1.0], [0.0], [2.0]])
        np.testing.assert_allclose(policy_eval(star, ou, 0.4, x)[:, 0], cf.policy(0.4))

    def test_zero(self, ou):
        assert np.all(PolicyHandle("zero", diffusion=ou)(0.3, np.ones((4, 1))) == 0)

    def test_default_floor(self, ou):
        assert PolicyHandle("zero", diffusion=ou, alpha=1.0).f_floor == pytest.approx(np.exp(-3.0))

    def test_floor_counts_clamps(self, ou):
        b = BasisSpec(0, (monomial([0]), monomial([1])), 1, 1.0)
        model = ValueModel(b, [0.0, 1.0], 10.0)  # f = x, negative for x < 0
        ph = PolicyHandle("value_model", model, ou, 1.0)
        act = ph(0.0, np.array([[-1.0], [2.0]]))
        assert ph.clamp_activations == 1
        np.testing.assert_allclose(act[:, 0], [2.0 / np.exp(-3.0), 1.0])

    def test_action_cap(self, star, cf, ou):
        ph = PolicyHandle("closed_form", cf, ou, 1.0, action_cap=0.1)
        act = ph(0.9, np.zeros((3, 1)))
        np.testing.assert_allclose(np.abs(act), 0.1)
        assert ph.cap_activations == 3

    @pytest.mark.parametrize("kwargs", [dict(source="other"), dict(source="oracle")])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            PolicyHandle(**kwargs)


class TestObjective:
    def test_zero_policy(self, ou, ou_reward):
        J, se, comps = estimate_objective(ou, ou_reward, 1.0, PolicyHandle("zero", diffusion=ou), 20000, 0.01, 1)
        assert abs(J + 1.0) < 4 * se
        assert comps["control_cost"] == 0.0 and comps["running"] == pytest.approx(-1.0)

    def test_optimal_policy_value(self, ou, ou_reward, star, cf):
        # J(pi*) = alpha E log f*(0, X_0)
        J, se, _ = estimate_objective(ou, ou_reward, 1.0, star, 20000, 0.01, 2)
        assert abs(J - (-1.0 + KL_STAR)) < 4 * se + 1e-3

    def test_optimal_beats_zero(self, ou, ou_reward, star):
        J0 = estimate_objective(ou, ou_reward, 1.0, PolicyHandle("zero", diffusion=ou), 20000, 0.01, 4)[0]
        Js = estimate_objective(ou, ou_reward, 1.0, star, 20000, 0.01, 4)[0]
        assert Js > J0


class TestKL:
    def test_closed_form_policy(self, ou, star):
        kq, kl, se = kl_path_estimate(ou, star, 20000, 0.01, 3)
        assert kq == pytest.approx(KL_STAR, rel=1e-3)
        assert abs(kl - kq) < 4 * se["combined"]
        assert se["combined"] == pytest.approx(np.hypot(se["quadratic"], se["logratio"]))

    def test_zero_policy(self, ou):
        kq, kl, _ = kl_path_estimate(ou, PolicyHandle("zero", diffusion=ou), 100, 0.1, 0)
        assert kq == 0.0 and kl == 0.0


class TestMirrorDescent:
    def test_step(self, ou, ou_reward, star):
        nxt, alpha = mirror_descent_step(ou, ou_reward, 1.0, 2.0, star)
        assert alpha == pytest.approx(1.5)
        x = np.array([[0.5]])
        expected = drift_eval(ou, 0.3, x) + star(0.3, x) / 3.0
        np.testing.assert_allclose(drift_eval(nxt, 0.3, x), expected)
        assert nxt.digest() != ou.digest()

    def test_composed_policy(self, ou, ou_reward, star):
        nxt, _ = mirror_descent_step(ou, ou_reward, 1.0, 1.0, star)
        zero = PolicyHandle("zero", diffusion=nxt)
        x = np.array([[0.5], [-1.0]])
        np.testing.assert_allclose(ComposedPolicy(ou, nxt, zero)(0.2, x), star(0.2, x) / 2.0)

    def test_rejects_bad_gamma(self, ou, ou_reward, star):
        with pytest.raises(ValueError):
            mirror_descent_step(ou, ou_reward, 1.0, 0.0, star)


class TestClassifierGuidance:
    def test_recovers_terminal_value(self, ou, ou_reward):
        b = BasisSpec(1, (monomial([0]), monomial([1])), 1, 1.0)
        ds = generate_dataset(ou, ou_reward, 2000, 5, 0.01, 8)
        model = classifier_guidance_fit(ds, b, 1.0)
        assert model.theta.shape == (b.n_features,)
        assert np.all(np.isfinite(model.theta))

    def test_needs_snapshots(self, ou, ou_reward):
        b = BasisSpec(0, (monomial([0]),), 1, 1.0)
        with pytest.raises(ValueError, match="K >= 1"):
            classifier_guidance_fit(generate_dataset(ou, ou_reward, 5, 0, 0.1, 0), b, 1.0)

    def test_ridge_model_exact_fit(self):
        b = BasisSpec(1, (monomial([0]), monomial([1])), 1, 1.0)
        rng = np.random.default_rng(0)
        t, x = rng.uniform(size=50), rng.normal(size=(50, 1))
        truth = ValueModel(b, [1.0, 0.5, -0.2, 0.3], 10.0)
        fit = ridge_model(b, t, x, truth.value(t, x), ridge=0.0)
        np.testing.assert_allclose(fit.theta, truth.theta, atol=1e-10)
