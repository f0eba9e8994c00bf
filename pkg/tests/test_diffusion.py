import numpy as np
import pytest

from hjbvi.diffusion import (AffineDrift, BlowUpError, DiffusionMatrix, DiffusionSpec, InitLaw, NonFiniteDriftError,
                             OUDrift, PolynomialDrift, drift_eval, generator_apply, ou_spec, simulate_paths, time_grid)


class TestSpec:
    def test_roundtrip_and_digest(self, ou):
        again = DiffusionSpec.from_dict(ou.to_dict())
        assert again.digest() == ou.digest()
        assert ou.lambda_min == pytest.approx(2.0)

    def test_degenerate_diffusion_rejected(self):
        with pytest.raises(ValueError, match="positive definite"):
            DiffusionSpec(1, 1.0, OUDrift(1.0), DiffusionMatrix([[[0.0]]]), InitLaw("point", [0.0]))

    def test_degenerate_allowed_with_flag(self):
        spec = DiffusionSpec(1, 1.0, OUDrift(1.0), DiffusionMatrix([[[0.0]]], allow_degenerate=True),
                             InitLaw("point", [0.0]))
        assert spec.lambda_min == 0.0


class TestDrift:
    def test_ou_drift(self, ou):
        np.testing.assert_allclose(drift_eval(ou, 0.3, [[2.0]]), [[-2.0]])

    def test_affine_time_polynomial(self):
        drift = AffineDrift([[[1.0]], [[2.0]]], [[0.0], [1.0]])
        # A(t) = 1 + 2t, c(t) = t
        np.testing.assert_allclose(drift(0.5, np.array([[3.0]])), [[3.0 * 2.0 + 0.5]])

    def test_polynomial_drift(self):
        drift = PolynomialDrift(2, [(0, (1, 1), 2.0), (1, (2, 0), -1.0)])
        np.testing.assert_allclose(drift(0.0, np.array([[2.0, 3.0]])), [[12.0, -4.0]])

    def test_non_finite_drift_names_point(self):
        spec = DiffusionSpec(1, 1.0, _Inf(),
                             DiffusionMatrix.scalar(1.0), InitLaw("point", [0.0]))
        with pytest.raises(NonFiniteDriftError, match="t=0.5"):
            drift_eval(spec, 0.5, [[1.0]])


class _Inf:
    def __call__(self, t, x):
        return np.full_like(x, np.inf)

    def to_dict(self):
        return {"family": "inf"}


def test_generator_on_quadratic(ou):
    # f = x^2: A f = -x * 2x + 0.5 * 2 * 2
    assert generator_apply(ou, 0.0, [1.5], [3.0], [[2.0]]) == pytest.approx(-4.5 + 2.0)


@pytest.mark.parametrize("dt, ok", [(0.1, True), (0.25, True), (0.3, False)])
def test_time_grid_divisibility(dt, ok):
    if ok:
        grid = time_grid(0.0, 1.0, dt)
        assert grid[-1] == 1.0 and grid[0] == 0.0
    else:
        with pytest.raises(ValueError, match="divide"):
            time_grid(0.0, 1.0, dt)


class TestSimulation:
    def test_deterministic(self, ou):
        a = simulate_paths(ou, 100, 0.01, 3)
        b = simulate_paths(ou, 100, 0.01, 3)
        np.testing.assert_array_equal(a.states, b.states)

    def test_seed_changes_paths(self, ou):
        a = simulate_paths(ou, 50, 0.01, 3)
        b = simulate_paths(ou, 50, 0.01, 4)
        assert not np.array_equal(a.states, b.states)

    def test_zero_diffusion_is_ode(self):
        spec = DiffusionSpec(1, 1.0, OUDrift(1.0), DiffusionMatrix([[[0.0]]], allow_degenerate=True),
                             InitLaw("point", [1.0]))
        batch = simulate_paths(spec, 3, 1e-3, 0)
        assert batch.states[0, -1, 0] == pytest.approx(np.exp(-1.0), rel=1e-3)

    def test_ou_stationary_moments(self, ou):
        batch = simulate_paths(ou, 20000, 0.01, 9)
        xT = batch.states[:, -1, 0]
        assert abs(xT.mean()) < 4 * np.sqrt(1.0 / 20000)
        assert xT.var() == pytest.approx(1.0, abs=0.05)

    def test_increments_retained(self, ou):
        batch = simulate_paths(ou, 10, 0.1, 1, keep_increments=True)
        assert batch.brownian_increments_retained
        assert batch.increments.shape == (10, 10, 1)

    def test_blowup_reported(self):
        spec = DiffusionSpec(1, 1.0, OUDrift(-50.0), DiffusionMatrix.scalar(1.0), InitLaw("point", [1.0]))
        batch = simulate_paths(spec, 4, 0.01, 0, blowup=1e3)
        assert batch.failed.size == 4
        assert np.all(np.isnan(batch.states[:, -1]))
        assert isinstance(BlowUpError(batch.failed, 1e3), RuntimeError)


def test_threads_do_not_change_results(ou):
    a = simulate_paths(ou, 20000, 0.1, 4, threads=1)
    b = simulate_paths(ou, 20000, 0.1, 4, threads=3)
    np.testing.assert_array_equal(a.states, b.states)


def test_ou_spec_point_init():
    spec = ou_spec(2.0, 1.0, 1.0, x0=0.5)
    batch = simulate_paths(spec, 5, 0.5, 0)
    np.testing.assert_array_equal(batch.states[:, 0, 0], 0.5)
