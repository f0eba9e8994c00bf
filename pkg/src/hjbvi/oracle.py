"""Reference solutions: Feynman-Kac Monte Carlo, the scalar OU closed form and
manufactured problems whose solution is known by construction."""

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_count, check_positive, check_states
from .diffusion import BlowUpError, DEFAULT_BLOWUP, OUDrift, propagate, simulate_paths
from .forms import potential
from .rewards import ManufacturedReward, ManufacturedTerminal, NoNoise, RewardSpec

SCALINGS = ("alpha_r", "r_over_alpha")


@dataclass
class OracleConfig:
    n_paths: int = 100_000
    dt: float = 1e-3
    seed: int = 0
    gradient_fd_step: float = None
    potential_scaling: str = "alpha_r"

    def __post_init__(self):
        check_count(self.n_paths, "n_paths", minimum=1)
        check_positive(self.dt, "dt")
        if self.potential_scaling not in SCALINGS:
            raise ValueError(f"potential_scaling must be one of {SCALINGS}, got {self.potential_scaling!r}")
        if self.gradient_fd_step is not None:
            check_positive(self.gradient_fd_step, "gradient_fd_step")


class _FKVisitor:
    def __init__(self, reward, alpha, dt, n_nodes, scaling):
        self.reward, self.alpha, self.dt = reward, alpha, dt
        self.last = n_nodes - 1
        self.scaling = scaling
        self.integral = None
        self.log_w = None

    def visit(self, step, t, x, action, dB):
        if self.last == 0:
            self.integral = np.zeros(x.shape[0])
        else:
            w = self.dt * (0.5 if step in (0, self.last) else 1.0)
            r = self.reward.intermediate(t, x)
            self.integral = w * r if self.integral is None else self.integral + w * r
        if step == self.last:
            self.log_w = potential(self.integral, self.alpha, self.scaling) + self.reward.terminal(x) / self.alpha

    def result(self):
        return self.log_w


def fk_weights(diff, reward, alpha, t, x, n, dt, seed, scaling="alpha_r", blowup=DEFAULT_BLOWUP):
    """Per-path Feynman-Kac weights ``exp(k * int_t^T r ds + y(X_T)/alpha)`` from ``(t, x)``.

    ``k`` is ``alpha`` or ``1/alpha`` according to ``scaling``. Paths share
    Brownian noise for equal ``seed``, whatever the start point.
    """
    x = check_states(x, diff.dim)
    if x.shape[0] != 1:
        raise ValueError("fk_weights takes a single start state")
    if not 0.0 <= t <= diff.horizon:
        raise ValueError(f"t={t} outside [0, {diff.horizon}]")
    n_nodes = int(round((diff.horizon - t) / dt)) + 1
    results, failed = propagate(diff, n, dt, seed,
                                lambda rows: _FKVisitor(reward, alpha, dt, n_nodes, scaling),
                                t0=t, x0=x, blowup=blowup)
    if failed.size:
        raise BlowUpError(failed, blowup)
    return np.exp(np.concatenate(results))


def _mean_se(w):
    se = float(np.std(w, ddof=1) / np.sqrt(w.shape[0])) if w.shape[0] > 1 else 0.0
    return float(np.mean(w)), se


def fk_value(diff, reward, alpha, t, x, cfg):
    """Monte Carlo Feynman-Kac estimate of ``f*(t, x)``; returns ``(estimate, stderr)``."""
    alpha = check_positive(alpha, "alpha")
    x = check_states(x, diff.dim)
    if t == diff.horizon:
        return float(np.exp(reward.terminal(x)[0] / alpha)), 0.0
    return _mean_se(fk_weights(diff, reward, alpha, float(t), x, cfg.n_paths, cfg.dt, cfg.seed,
                               cfg.potential_scaling))


def default_fd_step(diff):
    return 1e-3 * max(1.0, float(np.sqrt(diff.lambda_max * diff.horizon)))


def fk_gradient(diff, reward, alpha, t, x, cfg):
    """Central finite-difference gradient of ``fk_value`` with common random numbers.

    Returns ``(gradient, stderr)``; warns when a component's difference is
    below five standard errors.
    """
    x = check_states(x, diff.dim)[0]
    h = cfg.gradient_fd_step or default_fd_step(diff)
    grad = np.empty(diff.dim)
    se = np.empty(diff.dim)
    for i in range(diff.dim):
        e = np.zeros(diff.dim)
        e[i] = h
        if t == diff.horizon:
            up = np.exp(reward.terminal((x + e)[None])[0] / alpha)
            dn = np.exp(reward.terminal((x - e)[None])[0] / alpha)
            grad[i], se[i] = (up - dn) / (2 * h), 0.0
            continue
        args = (cfg.n_paths, cfg.dt, cfg.seed, cfg.potential_scaling)
        d = fk_weights(diff, reward, alpha, float(t), (x + e)[None], *args) \
            - fk_weights(diff, reward, alpha, float(t), (x - e)[None], *args)
        mean, s = _mean_se(d)
        grad[i], se[i] = mean / (2 * h), s / (2 * h)
        if abs(mean) < 5 * s:
            warnings.warn(f"finite-difference signal in coordinate {i} is below 5 standard errors "
                          f"(|diff| = {abs(mean):.3g}, stderr = {s:.3g}); increase the step or the path count",
                          RuntimeWarning, stacklevel=2)
    return grad, se


# -- scalar OU closed form ----------------------------------------------------


def _ou_parts(theta, sigma2, c, alpha, horizon, t, x):
    if not theta > 0:
        raise ValueError(f"OU rate theta must be positive, got {theta}")
    alpha = check_positive(alpha, "alpha")
    tau = horizon - np.asarray(t, dtype=float)
    e = np.exp(-theta * tau)
    v = sigma2 * (1.0 - e * e) / (2.0 * theta)
    xx = np.asarray(x, dtype=float)
    logf = -alpha * tau + c * xx * e / alpha + c * c * v / (2 * alpha * alpha)
    return np.exp(logf), e


def ou_closed_form(ou_params, c, alpha, t, x, horizon=1.0):
    """Exact solution for ``dX = -theta X dt + sigma dB``, ``r = -1``, ``y = c x``.

    ``f(t, x) = exp(-alpha (T - t) + c m / alpha + c^2 v / (2 alpha^2))`` with
    ``m = x exp(-theta (T - t))`` and ``v = sigma^2 (1 - exp(-2 theta (T - t))) / (2 theta)``.
    Broadcasts over ``t`` and scalar ``x``.
    """
    f, _ = _ou_parts(float(ou_params["theta"]), float(ou_params["sigma2"]), float(c), alpha, horizon, t, x)
    return f


def ou_closed_form_grad(ou_params, c, alpha, t, x, horizon=1.0):
    f, e = _ou_parts(float(ou_params["theta"]), float(ou_params["sigma2"]), float(c), alpha, horizon, t, x)
    return f * c * e / alpha


class ClosedFormOU:
    """The scalar OU closed form as a value object with analytic derivatives."""

    def __init__(self, theta, sigma2, c, alpha, horizon):
        self.theta, self.sigma2, self.c = float(theta), float(sigma2), float(c)
        self.alpha, self.horizon = float(alpha), float(horizon)
        _ou_parts(self.theta, self.sigma2, self.c, self.alpha, self.horizon, 0.0, 0.0)

    @classmethod
    def from_problem(cls, diff, reward, alpha):
        """Build from an OU DiffusionSpec with ``r = -1`` and linear terminal reward."""
        drift = diff.drift
        if not isinstance(drift, OUDrift) or diff.dim != 1 or np.any(drift.mu) or not diff.diffusion.constant:
            raise ValueError("closed form needs a scalar centered OU diffusion")
        lo, hi = reward.intermediate.bounds()
        if lo != -1.0 or hi != -1.0:
            raise ValueError("closed form needs r = -1")
        term = reward.terminal.to_dict()
        if term.get("kind") != "linear" or term.get("offset", 0.0) != 0.0:
            raise ValueError("closed form needs y(x) = c x")
        return cls(drift.theta, diff.diffusion.coeffs[0][0, 0], term["c"][0], alpha, diff.horizon)

    def _parts(self, t, x):
        xs = check_states(x, 1)[:, 0]
        return _ou_parts(self.theta, self.sigma2, self.c, self.alpha, self.horizon, t, xs) + (xs,)

    def value(self, t, x):
        return self._parts(t, x)[0]

    def time_derivative(self, t, x):
        f, e, xs = self._parts(t, x)
        a = self.alpha
        return f * (a + self.c * self.theta * xs * e / a - self.c ** 2 * self.sigma2 * e * e / (2 * a * a))

    def gradient(self, t, x):
        f, e, _ = self._parts(t, x)
        return (f * self.c * e / self.alpha)[:, None]

    def hessian(self, t, x):
        f, e, _ = self._parts(t, x)
        return (f * (self.c * e / self.alpha) ** 2)[:, None, None]

    def policy(self, t):
        """``pi*_t = sigma^2 (c / alpha) exp(-theta (T - t))`` (state independent)."""
        return self.sigma2 * self.c / self.alpha * np.exp(-self.theta * (self.horizon - np.asarray(t, dtype=float)))


# -- manufactured problems ----------------------------------------------------


def manufactured_problem(fstar, diff, alpha, scaling="alpha_r", noise=None, n_probe=1000, seed=0,
                         return_report=False):
    """Reward specification whose solution is exactly ``fstar``.

    ``r = -(df/dt + A f) / (alpha f)`` (or ``-alpha (df/dt + A f) / f`` under
    ``r_over_alpha``) and ``y = alpha log f_T``. Positivity of ``fstar`` is
    checked at ``n_probe`` points drawn from the reference process.
    """
    alpha = check_positive(alpha, "alpha")
    if scaling not in SCALINGS:
        raise ValueError(f"unknown potential scaling {scaling!r}")
    dt = diff.horizon / 100
    batch = simulate_paths(diff, max(1, n_probe // 100 + 1), dt, seed)
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, batch.n_paths, n_probe)
    cols = rng.integers(0, batch.grid.shape[0], n_probe)
    t = batch.grid[cols]
    x = batch.states[rows, cols]
    f = fstar.value(t, x)
    bad = ~(f > 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise ValueError(f"f* is not positive at t={t[i]:.6g}, x={x[i].tolist()} (value {f[i]:.6g})")
    r = ManufacturedReward(fstar, diff, alpha, scaling)
    spec = RewardSpec(r, ManufacturedTerminal(fstar, diff.horizon, alpha), noise or NoNoise(),
                      manufactured=True, dim=diff.dim)
    if not return_report:
        return spec
    rv = r(t, x)
    report = {"r_min": float(rv.min()), "r_max": float(rv.max()), "f_min": float(f.min()), "n_probe": n_probe}
    return spec, report


class FKModel:
    """Feynman-Kac estimates exposed through the value/gradient interface.

    Each evaluation point triggers fresh simulations, so this is meant for a
    handful of probe points.
    """

    def __init__(self, diff, reward, alpha, cfg):
        self.diff, self.reward, self.alpha, self.cfg = diff, reward, float(alpha), cfg

    def _rows(self, t, x):
        xs = check_states(x, self.diff.dim)
        ts = np.broadcast_to(np.asarray(t, dtype=float), (xs.shape[0],))
        return ts, xs

    def value(self, t, x):
        ts, xs = self._rows(t, x)
        return np.array([fk_value(self.diff, self.reward, self.alpha, ti, xi, self.cfg)[0] for ti, xi in zip(ts, xs)])

    def gradient(self, t, x):
        ts, xs = self._rows(t, x)
        return np.array([fk_gradient(self.diff, self.reward, self.alpha, ti, xi, self.cfg)[0] for ti, xi in zip(ts, xs)])
