"""Ball-constrained proximal iteration in the (empirical or population) Sobolev metric.

Each step minimizes ``(theta - theta_m)' G_r (theta - theta_m) - 2 gamma c_m' (theta - theta_m)``
over ``||theta|| <= rho`` where ``G_r`` is the ridged energy Gram matrix and
``c_m`` the bilinear-form vector at the current iterate.
"""

import csv
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _io
from .fnclass import ValueModel
from .forms import assemble, population_context

TRACE_COLUMNS = ("iter", "step_norm", "objective", "theta_norm", "constraint_active")


class SolverError(ArithmeticError):
    """Numerical failure inside the proximal iteration."""


@dataclass
class SolverConfig:
    """Proximal iteration settings.

    ``gamma`` and ``ridge`` left as None are resolved from the assembled forms:
    ``ridge = 1e-8 * trace(G) / p`` and ``gamma = 0.5 * min(alpha, lambda_min, 1) / L**2``
    with ``L`` the G-preconditioned operator norm.
    """

    gamma: float = None
    max_iters: int = 500
    ball_radius: float = 100.0
    ridge: float = None
    stop_tol: float = 1e-8
    record_trace: bool = True

    def __post_init__(self):
        if self.gamma is not None and not self.gamma >= 0:
            raise ValueError(f"gamma must be non-negative, got {self.gamma}")
        if self.ridge is not None and not self.ridge >= 0:
            raise ValueError(f"ridge must be non-negative, got {self.ridge}")
        if not self.stop_tol >= 0:
            raise ValueError(f"stop_tol must be non-negative, got {self.stop_tol}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError(f"max_iters must be a non-negative integer, got {self.max_iters}")
        if not self.ball_radius > 0:
            raise ValueError(f"ball_radius must be positive, got {self.ball_radius}")


@dataclass
class FitReport:
    iterations_run: int
    theta: np.ndarray
    config: dict
    gamma: float
    ridge: float
    converged: bool
    operator_norm: float = None
    potential_scaling: str = "alpha_r"
    step_norm: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    theta_norm: list = field(default_factory=list)
    constraint_active: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self, include_timing=False):
        """JSON-ready dict; wall time is left out unless asked for so files stay reproducible."""
        out = {
            "iterations_run": self.iterations_run, "theta": np.asarray(self.theta).tolist(),
            "config": self.config, "gamma": self.gamma, "ridge": self.ridge, "converged": self.converged,
            "operator_norm": self.operator_norm, "potential_scaling": self.potential_scaling,
            "ridge_disclosure": "ridge * I added to the energy Gram matrix for conditioning",
            "trace": {"step_norm": self.step_norm, "objective": self.objective, "theta_norm": self.theta_norm,
                      "constraint_active": self.constraint_active},
        }
        if include_timing:
            out["wall_time"] = self.wall_time
        return out

    def write_json(self, path, include_timing=False):
        _io.write_json(path, self.to_dict(include_timing))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for i in range(len(self.step_norm)):
                w.writerow([i + 1, _io.fmt_float(self.step_norm[i]), _io.fmt_float(self.objective[i]),
                            _io.fmt_float(self.theta_norm[i]), int(self.constraint_active[i])])


def default_ridge(gram):
    p = gram.shape[0]
    return 1e-8 * float(np.trace(gram)) / p


def operator_norm(ctx, ridge=0.0, n_iter=2000, tol=1e-12):
    """Power-iteration estimate of ``||L^-1 M L^-T||_2`` where ``G + ridge I = L L'``."""
    p = ctx.gram_E.shape[0]
    try:
        chol = np.linalg.cholesky(ctx.gram_E + ridge * np.eye(p))
    except np.linalg.LinAlgError:
        raise SolverError("energy Gram matrix is not positive definite; increase the ridge") from None
    K = np.linalg.solve(chol, np.linalg.solve(chol, ctx.M.T).T)
    v = np.ones(p) / np.sqrt(p)
    est = 0.0
    for _ in range(n_iter):
        w = K.T @ (K @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        new = np.sqrt(nrm)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return float(est)


def coercivity_constant(alpha, lambda_min):
    return min(float(alpha), float(lambda_min), 1.0)


def default_gamma(ctx, ridge=0.0):
    """``0.5 * min(alpha, lambda_min, 1) / L**2``; see :func:`operator_norm`."""
    L = operator_norm(ctx, ridge)
    if L == 0:
        raise SolverError("bilinear operator vanishes on the basis; no step size can be derived")
    return 0.5 * coercivity_constant(ctx.alpha, ctx.diffusion.lambda_min) / L ** 2, L


class _ProxOperator:
    """Eigendecomposition of ``G + ridge I`` shared by all steps of a run."""

    def __init__(self, gram, ridge):
        self.Gr = gram + ridge * np.eye(gram.shape[0])
        w, Q = np.linalg.eigh(self.Gr)
        if not np.all(np.isfinite(w)) or w[0] <= 1e-14 * max(w[-1], 1e-300):
            raise SolverError(f"regularized Gram matrix is singular (min eigenvalue {w[0]:.3g}); increase the ridge")
        self.w, self.Q = w, Q

    def solve(self, rhs, mu=0.0):
        return self.Q @ ((self.Q.T @ rhs) / (self.w + mu))

    def step(self, theta_m, c, gamma, rho):
        theta_u = theta_m + gamma * self.solve(c)
        if np.linalg.norm(theta_u) <= rho:
            return theta_u, False
        rhs = self.Gr @ theta_m + gamma * c
        z = self.Q.T @ rhs
        norm_at = lambda mu: np.linalg.norm(z / (self.w + mu))
        lo, hi = 0.0, np.linalg.norm(rhs) / rho
        while norm_at(hi) > rho:
            hi *= 2.0
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            nm = norm_at(mid)
            if abs(nm - rho) <= 1e-10 * rho:
                lo = hi = mid
                break
            if nm > rho:
                lo = mid
            else:
                hi = mid
        theta = self.Q @ (z / (self.w + hi))
        nrm = np.linalg.norm(theta)
        if nrm > rho:
            theta *= rho / nrm
        return theta, True


def _resolve(ctx, cfg):
    ridge = default_ridge(ctx.gram_E) if cfg.ridge is None else float(cfg.ridge)
    L = None
    if cfg.gamma is None:
        gamma, L = default_gamma(ctx, ridge)
    else:
        gamma = float(cfg.gamma)
    return gamma, ridge, L


def prox_step(ctx, theta_m, cfg):
    """One proximal step from ``theta_m``; returns the new coefficient vector."""
    theta_m = np.asarray(theta_m, dtype=float)
    gamma, ridge, _ = _resolve(ctx, cfg)
    op = _ProxOperator(ctx.gram_E, ridge)
    return op.step(theta_m, ctx.bilinear_vector(theta_m), gamma, cfg.ball_radius)[0]


def iterate(ctx, cfg, theta0=None, scaling="alpha_r", callback=None):
    """Run the proximal iteration on an assembled context; returns (model, FitReport)."""
    start = time.perf_counter()
    gamma, ridge, L = _resolve(ctx, cfg)
    p = ctx.gram_E.shape[0]
    theta = np.zeros(p) if theta0 is None else np.array(theta0, dtype=float)
    if np.linalg.norm(theta) > cfg.ball_radius + 1e-9:
        raise ValueError("initial coefficients lie outside the ball")
    op = _ProxOperator(ctx.gram_E, ridge)
    report = FitReport(0, theta, dict(asdict(cfg), gamma=gamma, ridge=ridge), gamma, ridge, False, L, scaling)
    for m in range(int(cfg.max_iters)):
        c = ctx.bilinear_vector(theta)
        new, active = op.step(theta, c, gamma, cfg.ball_radius)
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite coefficients at iteration {m + 1}")
        delta = new - theta
        step = float(np.sqrt(max(delta @ op.Gr @ delta, 0.0)))
        size = float(np.sqrt(max(new @ op.Gr @ new, 0.0)))
        if cfg.record_trace:
            report.step_norm.append(step)
            report.objective.append(float(delta @ op.Gr @ delta - 2 * gamma * c @ delta))
            report.theta_norm.append(float(np.linalg.norm(new)))
            report.constraint_active.append(bool(active))
        theta = new
        report.iterations_run = m + 1
        if callback is not None:
            callback(m + 1, theta)
        if step <= cfg.stop_tol * max(size, 1e-300):
            report.converged = True
            break
    report.theta = theta
    report.wall_time = time.perf_counter() - start
    return ValueModel(ctx.basis, theta, cfg.ball_radius), report


def fit(dataset, basis, diff, alpha, cfg, theta0=None, scaling="alpha_r"):
    """Assemble the empirical forms and iterate from ``theta0`` (zero by default)."""
    ctx = assemble(dataset, basis, diff, alpha, scaling)
    return iterate(ctx, cfg, theta0, scaling)


@dataclass
class PopulationTrace:
    distances: np.ndarray  # ||f^(m) - f_bar||_{S,T}, m = 0..iterations
    fixed_point: np.ndarray
    ratios: np.ndarray


def fit_population(diff, reward, alpha, basis, cfg, cloud, fstar, scaling="alpha_r", theta0=None):
    """Population proximal iteration against a known solution ``fstar``.

    Returns ``(model, PopulationTrace, FitReport)``. The reference iterate
    ``f_bar`` is the exact fixed point ``M theta = b`` when it lies inside the
    ball, else the final iterate.
    """
    if fstar is None:
        raise ValueError("fit_population needs a known solution (manufactured or closed form)")
    ctx = population_context(basis, diff, reward, alpha, cloud, fstar, scaling)
    iterates = []
    theta_init = np.zeros(basis.n_features) if theta0 is None else np.asarray(theta0, dtype=float)
    model, report = iterate(ctx, replace(cfg, stop_tol=0.0) if cfg.stop_tol else cfg, theta_init, scaling,
                            callback=lambda m, th: iterates.append(th.copy()))
    try:
        bar = np.linalg.solve(ctx.M, ctx.bvec)
    except np.linalg.LinAlgError:
        bar = None
    if bar is None or np.linalg.norm(bar) > cfg.ball_radius:
        bar = model.theta.copy()
    seq = [theta_init] + iterates
    G = ctx.gram_E
    dist = np.array([np.sqrt(max((th - bar) @ G @ (th - bar), 0.0)) for th in seq])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(dist[:-1] > 0, dist[1:] / dist[:-1], 0.0)
    return model, PopulationTrace(dist, bar, ratios), report


def vi_residual(ctx, theta, g_thetas):
    """Normalized empirical VI residuals ``B_n(f, g - f) / S(g - f)`` for each row of ``g_thetas``.

    ``S(h)`` sums the absolute magnitudes of every term entering ``B_n(f, h)``.
    """
    c = ctx.cache
    ds = ctx.dataset
    theta = np.asarray(theta, dtype=float)
    H = np.atleast_2d(g_thetas) - theta
    vec = ctx.bilinear_vector(theta)
    num = H @ vec
    fT = c["phi_T"] @ theta
    scale = (np.abs(c["expY"]) + np.abs(fT)) @ np.abs(c["phi_T"] @ H.T) / ds.n
    if ds.K:
        Lf = np.abs(c["Lphi_obs"] @ theta)
        scale = scale + Lf @ np.abs(c["phi_obs"] @ H.T) * ds.T / (ds.n * ds.K)
    return num / scale


def random_feasible(p, rho, n, seed):
    """``n`` points drawn uniformly from the centered ball of radius ``rho`` in R^p."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, p))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * (rho * rng.uniform(size=(n, 1)) ** (1.0 / p))
