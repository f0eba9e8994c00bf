import numpy as np
import pytest

from hjbvi.oracle import (ClosedFormOU, FKModel, OracleConfig, default_fd_step, fk_gradient, fk_value,
                          manufactured_problem, ou_closed_form, ou_closed_form_grad)
from hjbvi.rewards import ConstantReward, LinearTerminal, RewardSpec

OU = {"theta": 1.0, "sigma2": 2.0}


class _CosTerminal:
    def __call__(self, x):
        return 0.5 * np.cos(3.0 * x[:, 0])

    def to_dict(self):
        return {"kind": "cos"}


class TestClosedForm:
    def test_reference_value(self):
        expected = np.exp(-1.0 + 0.125 * (1 - np.exp(-2.0)))
        assert ou_closed_form(OU, 0.5, 1.0, 0.0, 0.0) == pytest.approx(expected, rel=1e-14)

    def test_terminal_condition(self):
        x = np.linspace(-2, 2, 5)
        np.testing.assert_allclose(ou_closed_form(OU, 0.5, 2.0, 1.0, x), np.exp(0.5 * x / 2.0))

    def test_gradient(self):
        h = 1e-6
        fd = (ou_closed_form(OU, 0.5, 1.0, 0.3, 0.4 + h) - ou_closed_form(OU, 0.5, 1.0, 0.3, 0.4 - h)) / (2 * h)
        assert ou_closed_form_grad(OU, 0.5, 1.0, 0.3, 0.4) == pytest.approx(fd, rel=1e-8)

    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    def test_solves_pde(self, alpha):
        cf = ClosedFormOU(1.3, 0.7, 0.4, alpha, 1.0)
        t, x = 0.35, np.array([[-1.0], [0.2], [1.7]])
        f = cf.value(t, x)
        resid = (cf.time_derivative(t, x) - 1.3 * x[:, 0] * cf.gradient(t, x)[:, 0]
                 + 0.5 * 0.7 * cf.hessian(t, x)[:, 0, 0] - alpha * f)
        np.testing.assert_allclose(resid, 0.0, atol=1e-12)

    def test_policy_matches_score(self):
        cf = ClosedFormOU(1.0, 2.0, 0.5, 1.0, 1.0)
        t, x = 0.6, np.array([[0.3]])
        assert cf.policy(t) == pytest.approx(2.0 * cf.gradient(t, x)[0, 0] / cf.value(t, x)[0])

    def test_from_problem(self, ou, ou_reward):
        cf = ClosedFormOU.from_problem(ou, ou_reward, 1.0)
        assert (cf.theta, cf.sigma2, cf.c) == (1.0, 2.0, 0.5)
        with pytest.raises(ValueError, match="r = -1"):
            ClosedFormOU.from_problem(ou, RewardSpec(ConstantReward(-2.0), LinearTerminal(0.5)), 1.0)

    def test_rejects_nonpositive_rate(self):
        with pytest.raises(ValueError):
            ou_closed_form({"theta": 0.0, "sigma2": 1.0}, 0.5, 1.0, 0.0, 0.0)


class TestFeynmanKac:
    CFG = OracleConfig(n_paths=20000, dt=0.01, seed=3)

    @pytest.mark.parametrize("t, x", [(0.0, 0.0), (0.5, 1.0), (0.9, -2.0)])
    def test_matches_closed_form(self, ou, ou_reward, t, x):
        est, se = fk_value(ou, ou_reward, 1.0, t, [x], self.CFG)
        exact = ou_closed_form(OU, 0.5, 1.0, t, x)
        assert abs(est - exact) < 4 * se + 1e-3 * exact

    def test_terminal_time_is_exact(self, ou, ou_reward):
        assert fk_value(ou, ou_reward, 1.0, 1.0, [0.8], self.CFG) == (pytest.approx(np.exp(0.4)), 0.0)

    def test_deterministic(self, ou, ou_reward):
        a = fk_value(ou, ou_reward, 1.0, 0.2, [0.1], self.CFG)
        b = fk_value(ou, ou_reward, 1.0, 0.2, [0.1], self.CFG)
        assert a == b

    def test_gradient(self, ou, ou_reward):
        g, se = fk_gradient(ou, ou_reward, 1.0, 0.5, [0.5], OracleConfig(n_paths=20000, dt=0.01, seed=1,
                                                                         gradient_fd_step=0.05))
        exact = ou_closed_form_grad(OU, 0.5, 1.0, 0.5, 0.5)
        assert abs(g[0] - exact) < 4 * se[0] + 2e-3

    def test_gradient_warns_on_weak_signal(self, ou):
        # E cos(3 X_T) is flat at x = 0 while pathwise derivatives change sign
        spec = RewardSpec(ConstantReward(-1.0), _CosTerminal(), normalized=True)
        with pytest.warns(RuntimeWarning, match="standard errors"):
            fk_gradient(ou, spec, 1.0, 0.5, [0.0], OracleConfig(n_paths=2000, dt=0.05, seed=0))

    def test_default_fd_step(self, ou):
        assert default_fd_step(ou) == pytest.approx(1e-3 * np.sqrt(2.0))

    def test_model_interface(self, ou, ou_reward):
        m = FKModel(ou, ou_reward, 1.0, OracleConfig(n_paths=2000, dt=0.05, seed=0))
        assert m.value(0.5, [[0.0], [1.0]]).shape == (2,)

    @pytest.mark.parametrize("kwargs", [dict(n_paths=0), dict(dt=0.0), dict(potential_scaling="x")])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            OracleConfig(**kwargs)


class TestManufactured:
    def test_reward_reproduces_solution(self, manufactured, ou):
        fstar, reward = manufactured
        est, se = fk_value(ou, reward, 1.0, 0.25, [0.5], OracleConfig(n_paths=20000, dt=0.005, seed=2))
        exact = fstar.value(0.25, [[0.5]])[0]
        assert abs(est - exact) < 4 * se + 5e-3 * exact

    def test_terminal_is_log_solution(self, manufactured):
        fstar, reward = manufactured
        x = np.array([[-1.0], [0.3]])
        np.testing.assert_allclose(reward.terminal(x), np.log(fstar.value(1.0, x)))

    def test_report(self, manufactured, ou):
        fstar, _ = manufactured
        _, report = manufactured_problem(fstar, ou, 1.0, return_report=True)
        assert report["f_min"] > 0 and report["n_probe"] == 1000

    def test_rejects_nonpositive(self, ou, rbf_basis):
        from hjbvi.fnclass import ValueModel
        bad = ValueModel(rbf_basis, -np.ones(rbf_basis.n_features), 100.0)
        with pytest.raises(ValueError, match="not positive"):
            manufactured_problem(bad, ou, 1.0)


class TestManufacturedExamples:
    def test_constant_solution_gives_zero_rewards(self, ou):
        from hjbvi.fnclass import BasisSpec, ValueModel, monomial
        one = ValueModel(BasisSpec(0, (monomial([0]),), 1, 1.0), [1.0], 10.0)
        spec = manufactured_problem(one, ou, 1.0)
        x = np.linspace(-2, 2, 7)[:, None]
        np.testing.assert_allclose(spec.intermediate(0.3, x), 0.0, atol=1e-14)
        np.testing.assert_allclose(spec.terminal(x), 0.0, atol=1e-14)

    @pytest.mark.parametrize("c", [0.0, 0.5])
    def test_closed_form_gives_unit_cost(self, ou, c):
        # the OU closed form solves the PDE with r = -1 and y = c x
        cf = ClosedFormOU(1.0, 2.0, c, 1.0, 1.0)
        spec = manufactured_problem(cf, ou, 1.0)
        rng = np.random.default_rng(0)
        t, x = rng.uniform(0, 1, 1000), rng.normal(size=(1000, 1))
        np.testing.assert_allclose(spec.intermediate(t, x), -1.0, atol=1e-10)
        np.testing.assert_allclose(spec.terminal(x), c * x[:, 0], atol=1e-12)


class TestSemigroup:
    def test_tower_property(self):
        from hjbvi.diffusion import ou_spec, simulate_paths
        cf = ClosedFormOU(1.0, 2.0, 0.5, 1.0, 1.0)
        batch = simulate_paths(ou_spec(1.0, 2.0, 1.0, x0=0.7), 40000, 0.01, 6)
        xs = batch.states[:, 50]
        w = np.exp(-0.5) * cf.value(0.5, xs)
        se = w.std(ddof=1) / np.sqrt(w.size)
        assert abs(w.mean() - cf.value(0.0, [[0.7]])[0]) < 4 * se + 1e-3

    def test_nested_time_steps(self, ou, ou_reward):
        coarse, se_c = fk_value(ou, ou_reward, 1.0, 0.0, [0.5], OracleConfig(20000, 1e-2, 4))
        fine, se_f = fk_value(ou, ou_reward, 1.0, 0.0, [0.5], OracleConfig(20000, 1e-3, 4))
        assert abs(coarse - fine) <= 0.01 * fine + 3 * np.hypot(se_c, se_f)
