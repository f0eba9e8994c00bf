"""Plug-in policies, controlled-process evaluation, KL diagnostics, the
mirror-descent outer step and the classifier-guidance regression baseline."""

import threading
from dataclasses import replace

import numpy as np
from scipy import linalg

from .diffusion import BlowUpError, DEFAULT_BLOWUP, ShiftedDrift, diffusion_at, propagate
from .fnclass import ValueModel, features
from ._validation import check_positive, check_states

SOURCES = ("value_model", "oracle", "zero", "closed_form")


class PolicyHandle:
    """``pi_t(x) = Lambda_t grad f(t, x) / max(f(t, x), f_floor)``, optionally capped.

    Parameters
    ----------
    source : {'value_model', 'oracle', 'zero', 'closed_form'}
    model : object with ``value(t, x)`` and ``gradient(t, x)``; unused for 'zero'
    diffusion : DiffusionSpec supplying ``Lambda_t``
    alpha : float
        Used for the default floor ``exp(-(T + 2) / alpha)``.
    f_floor : float, optional
    action_cap : float, optional
        Maximum Euclidean norm of an action.
    """

    def __init__(self, source, model=None, diffusion=None, alpha=1.0, f_floor=None, action_cap=None):
        if source not in SOURCES:
            raise ValueError(f"policy source must be one of {SOURCES}, got {source!r}")
        if source != "zero" and model is None:
            raise ValueError(f"policy source {source!r} needs a model")
        self.source = source
        self.model = model
        self.diffusion = diffusion
        horizon = diffusion.horizon if diffusion is not None else 1.0
        self.f_floor = float(np.exp(-(horizon + 2.0) / alpha)) if f_floor is None else check_positive(f_floor, "f_floor")
        self.action_cap = None if action_cap is None else check_positive(action_cap, "action_cap")
        self._lock = threading.Lock()
        self.clamp_activations = 0
        self.cap_activations = 0

    def reset_counts(self):
        self.clamp_activations = 0
        self.cap_activations = 0

    def evaluate(self, diff, t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        if self.source == "zero":
            return np.zeros((n, d))
        if hasattr(self.model, "derivatives"):
            f, _, g, _ = self.model.derivatives(t, x, hessian=False)
        else:
            f, g = self.model.value(t, x), self.model.gradient(t, x)
        low = f < self.f_floor
        denom = np.where(low, self.f_floor, f)
        act = np.einsum("nij,nj->ni", diffusion_at(diff, t, n), g / denom[:, None])
        n_cap = 0
        if self.action_cap is not None:
            norm = np.linalg.norm(act, axis=1)
            over = norm > self.action_cap
            n_cap = int(np.sum(over))
            act[over] *= (self.action_cap / norm[over])[:, None]
        with self._lock:
            self.clamp_activations += int(np.sum(low))
            self.cap_activations += n_cap
        return act

    def __call__(self, t, x):
        if self.diffusion is None:
            raise ValueError("policy handle is not bound to a diffusion")
        return self.evaluate(self.diffusion, t, x)

    def to_dict(self):
        model = self.model.to_dict() if hasattr(self.model, "to_dict") else type(self.model).__name__
        return {"source": self.source, "f_floor": self.f_floor, "action_cap": self.action_cap,
                "model": None if self.source == "zero" else model}


def policy_eval(ph, diff, t, x):
    """Action(s) of ``ph`` at time ``t`` and state(s) ``x``; shape (N, d)."""
    return ph.evaluate(diff, t, check_states(x, diff.dim))


class _CostVisitor:
    """Accumulates running reward, control energy and the Girsanov martingale term."""

    def __init__(self, diff, reward, dt, n_nodes, lam_inv_sqrt):
        self.diff, self.reward, self.dt = diff, reward, dt
        self.last = n_nodes - 1
        self.lam_inv_sqrt = lam_inv_sqrt
        self.running = self.energy = self.energy_left = self.mart = 0.0
        self.terminal = None

    def visit(self, step, t, x, action, dB):
        w = self.dt * (0.5 if step in (0, self.last) else 1.0)
        if self.reward is not None:
            self.running = self.running + w * self.reward.intermediate(t, x)
        u = action @ self.lam_inv_sqrt(t).T
        sq = np.sum(u * u, axis=1)
        self.energy = self.energy + w * sq
        if dB is not None:
            self.energy_left = self.energy_left + self.dt * sq
            self.mart = self.mart + np.sum(u * dB, axis=1)
        if step == self.last and self.reward is not None:
            self.terminal = self.reward.terminal(x)

    def result(self):
        return self.terminal, self.running, self.energy, self.energy_left, self.mart


def _simulate_costs(diff, reward, ph, n, dt, seed, blowup):
    if diff.diffusion.constant:
        fixed = np.linalg.inv(diff.diffusion.sqrt(0.0))
        inv_sqrt = lambda t: fixed
    else:
        inv_sqrt = lambda t: np.linalg.inv(diff.diffusion.sqrt(t))
    n_nodes = int(round(diff.horizon / dt)) + 1
    policy = lambda t, x: ph.evaluate(diff, t, x)
    results, failed = propagate(diff, n, dt, seed, lambda rows: _CostVisitor(diff, reward, dt, n_nodes, inv_sqrt),
                                policy=policy, blowup=blowup)
    if failed.size:
        raise BlowUpError(failed, blowup)
    parts = list(zip(*results))
    cat = lambda arrs: np.concatenate([np.broadcast_to(a, (m,)) for a, m in zip(arrs, _sizes(n))])
    return [None if parts[0][0] is None else cat(parts[0])] + [cat(p) for p in parts[1:]]


def _sizes(n):
    from .diffusion import CHUNK_SIZE
    return [min(CHUNK_SIZE, n - lo) for lo in range(0, n, CHUNK_SIZE)]


def _mean_se(v):
    return float(np.mean(v)), float(np.std(v, ddof=1) / np.sqrt(v.shape[0])) if v.shape[0] > 1 else 0.0


def estimate_objective(diff, reward, alpha, ph, n, dt, seed, blowup=DEFAULT_BLOWUP):
    """Monte Carlo ``J(pi) = E y(X_T) + int E r - (alpha/2) int E pi' Lambda^-1 pi``.

    Returns ``(J_hat, stderr, components)`` where components holds the three
    terms, their standard errors and the clamp activation count.
    """
    alpha = check_positive(alpha, "alpha")
    ph.reset_counts()
    y, run, energy, _, _ = _simulate_costs(diff, reward, ph, n, dt, seed, blowup)
    cost = 0.5 * alpha * energy
    J = y + run - cost
    J_hat, se = _mean_se(J)
    comps = {}
    for name, v in (("terminal", y), ("running", run), ("control_cost", cost)):
        comps[name], comps[name + "_stderr"] = _mean_se(v)
    comps["clamp_activations"] = ph.clamp_activations
    comps["cap_activations"] = ph.cap_activations
    return J_hat, se, comps


def kl_path_estimate(diff, ph, n, dt, seed, blowup=DEFAULT_BLOWUP):
    """Two estimators of ``KL(P^pi || P)`` from the same controlled paths.

    ``kl_quadratic`` is ``0.5 int E |Lambda^-1/2 pi|^2`` (trapezoid);
    ``kl_logratio`` averages the log density ratio
    ``sum pi' Lambda^-1/2 dB + 0.5 |Lambda^-1/2 pi|^2 dt`` (left point).
    Returns ``(kl_quadratic, kl_logratio, stderr)`` with stderr a dict
    holding both standard errors, their root-sum-square and the paired one.
    """
    _, _, energy, energy_left, mart = _simulate_costs(diff, None, ph, n, dt, seed, blowup)
    kq, se_q = _mean_se(0.5 * energy)
    logratio = mart + 0.5 * energy_left
    kl, se_l = _mean_se(logratio)
    _, se_pair = _mean_se(logratio - 0.5 * energy)
    stderr = {"quadratic": se_q, "logratio": se_l, "combined": float(np.hypot(se_q, se_l)), "paired": se_pair}
    return kq, kl, stderr


class ComposedPolicy:
    """Total control relative to a base drift: ``(b_k - b_0) + pi_k``."""

    def __init__(self, base_diffusion, current_diffusion, handle):
        self.base, self.current, self.handle = base_diffusion, current_diffusion, handle

    def __call__(self, t, x):
        shift = self.current.drift(t, x) - self.base.drift(t, x)
        return shift + self.handle.evaluate(self.current, t, x)

    def to_dict(self):
        return {"base": self.base.digest(), "current": self.current.digest(), "policy": self.handle.to_dict()}


def mirror_descent_step(diff, reward, alpha0, gamma_md, prev_policy):
    """Reference dynamics and temperature for the next mirror-descent round.

    Returns ``(diff', alpha')`` with drift ``b + prev_policy / (1 + alpha0 gamma_md)``
    and ``alpha' = alpha0 + 1 / gamma_md``.
    """
    gamma_md = check_positive(gamma_md, "gamma_md")
    alpha0 = check_positive(alpha0, "alpha0")
    drift = ShiftedDrift(diff.drift, prev_policy, 1.0 / (1.0 + alpha0 * gamma_md))
    return replace(diff, drift=drift), alpha0 + 1.0 / gamma_md


def classifier_guidance_fit(dataset, basis, alpha, ridge=1e-8):
    """Ridge regression of ``exp(Y / alpha)`` on the features at every snapshot.

    Each snapshot is paired with its own trajectory's terminal reward. The
    ridge is relative: ``ridge * trace(Phi' Phi) / p``.
    """
    alpha = check_positive(alpha, "alpha")
    if dataset.K == 0:
        raise ValueError("classifier guidance needs intermediate snapshots (K >= 1)")
    t = dataset.t_obs.reshape(-1)
    x = dataset.x_obs.reshape(-1, dataset.dim)
    target = np.repeat(np.exp(dataset.Y / alpha), dataset.K)
    return ridge_model(basis, t, x, target, ridge)


def ridge_model(basis, t, x, target, ridge=1e-8):
    """Unconstrained least squares on the features with relative ridge ``ridge * trace / p``."""
    phi = features(basis, t, x, hessian=False).phi
    A = phi.T @ phi
    p = A.shape[0]
    A[np.diag_indices(p)] += ridge * np.trace(A) / p
    try:
        theta = linalg.solve(A, phi.T @ target, assume_a="pos")
    except linalg.LinAlgError:
        raise ValueError("normal equations are singular; use a positive ridge") from None
    radius = max(1.0, float(np.linalg.norm(theta)) * (1 + 1e-9))
    return ValueModel(basis, theta, radius)
