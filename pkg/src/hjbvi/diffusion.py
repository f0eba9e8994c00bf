"""Uncontrolled and controlled diffusions and their Euler-Maruyama simulation.

The state equation is ``dX = (b_t(X) + pi_t(X)) dt + Lambda_t^{1/2} dB`` with a
diffusion matrix that depends on time only. Paths are simulated in fixed-size
chunks; every chunk owns a Philox stream keyed by ``(seed, chunk index)`` so
results do not depend on how chunks are scheduled across threads.
"""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_count, check_positive, check_square_matrix, check_states, check_times

logger = logging.getLogger(__name__)

CHUNK_SIZE = 8192
DEFAULT_BLOWUP = 1e6
_THREADS = 1


def set_num_threads(n):
    """Set the default number of worker threads used by path simulation."""
    global _THREADS
    _THREADS = check_count(n, "threads", minimum=1)


class BlowUpError(RuntimeError):
    """Raised when simulated paths leave the configured blow-up bound."""

    def __init__(self, failed, bound):
        self.failed = np.asarray(failed, dtype=int)
        self.bound = bound
        head = ", ".join(str(i) for i in self.failed[:10])
        more = "" if self.failed.size <= 10 else ", ..."
        super().__init__(f"{self.failed.size} path(s) exceeded |X| > {bound:g}: [{head}{more}]")


class NonFiniteDriftError(FloatingPointError):
    pass


def _poly_in_t(coeffs, t):
    # coeffs[k] multiplies t**k; scalar t gives one value, (N,) t a stacked array
    stack = np.stack(coeffs)
    powers = np.arange(stack.shape[0])
    if np.ndim(t) == 0:
        return np.tensordot(float(t) ** powers, stack, axes=1)
    return np.tensordot(np.asarray(t, dtype=float)[:, None] ** powers, stack, axes=1)


# -- drift families ---------------------------------------------------------


class OUDrift:
    """Ornstein-Uhlenbeck drift ``b(x) = -theta (x - mu)``."""

    family = "ou"

    def __init__(self, theta, mu=0.0):
        self.theta = float(theta)
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))

    def __call__(self, t, x):
        return -self.theta * (x - self.mu)

    def to_dict(self):
        return {"family": "ou", "theta": self.theta, "mu": self.mu.tolist()}


class AffineDrift:
    """Affine drift ``b_t(x) = A(t) x + c(t)`` with polynomial-in-t coefficients.

    ``A`` is a list of (d, d) matrices and ``c`` a list of d-vectors; entry k
    multiplies ``t**k``.
    """

    family = "affine"

    def __init__(self, A, c):
        self.A = [np.atleast_2d(np.asarray(a, dtype=float)) for a in A]
        self.c = [np.atleast_1d(np.asarray(v, dtype=float)) for v in c]

    def __call__(self, t, x):
        if np.ndim(t):
            return np.einsum("nij,nj->ni", _poly_in_t(self.A, t), x) + _poly_in_t(self.c, t)
        A = _poly_in_t(self.A, t)
        return x @ A.T + _poly_in_t(self.c, t)

    def to_dict(self):
        return {"family": "affine", "A": [a.tolist() for a in self.A], "c": [v.tolist() for v in self.c]}


class PolynomialDrift:
    """Drift whose components are polynomials in x.

    ``terms`` holds ``(component, powers, coef)`` triples: component ``i`` of
    the drift receives ``coef * prod_j x_j**powers[j]``.
    """

    family = "polynomial"

    def __init__(self, dim, terms):
        self.dim = int(dim)
        self.terms = [(int(i), tuple(int(p) for p in powers), float(coef)) for i, powers, coef in terms]
        for i, powers, _ in self.terms:
            if not 0 <= i < self.dim or len(powers) != self.dim:
                raise ValueError(f"bad polynomial drift term {(i, powers)} for dim {self.dim}")

    def __call__(self, t, x):
        out = np.zeros_like(x)
        for i, powers, coef in self.terms:
            out[:, i] += coef * np.prod(x ** np.asarray(powers), axis=1)
        return out

    def to_dict(self):
        return {"family": "polynomial", "terms": [[i, list(p), c] for i, p, c in self.terms]}


class ShiftedDrift:
    """Base drift plus a scaled policy, ``b + scale * pi``.

    Produced by the mirror-descent step; the policy must expose ``__call__(t, x)``
    and ``to_dict()`` for the digest.
    """

    family = "shifted"

    def __init__(self, base, policy, scale):
        self.base = base
        self.policy = policy
        self.scale = float(scale)

    def __call__(self, t, x):
        return self.base(t, x) + self.scale * self.policy(t, x)

    def to_dict(self):
        return {"family": "shifted", "base": self.base.to_dict(), "policy": self.policy.to_dict(), "scale": self.scale}


def drift_from_dict(d, dim):
    fam = d.get("family")
    if fam == "ou":
        return OUDrift(d["theta"], d.get("mu", 0.0))
    if fam == "affine":
        return AffineDrift(d["A"], d["c"])
    if fam == "polynomial":
        return PolynomialDrift(dim, d["terms"])
    raise ValueError(f"unknown or non-serializable drift family {fam!r}")


# -- diffusion matrix and initial law ---------------------------------------


class DiffusionMatrix:
    """Symmetric PSD ``Lambda_t`` given as a polynomial in t with matrix coefficients."""

    def __init__(self, coeffs, allow_degenerate=False):
        self.coeffs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in coeffs]
        self.allow_degenerate = bool(allow_degenerate)
        self.constant = len(self.coeffs) == 1
        if self.constant:
            self._sqrt = _psd_sqrt(self.coeffs[0])

    @classmethod
    def scalar(cls, value, dim=1, allow_degenerate=False):
        return cls([float(value) * np.eye(dim)], allow_degenerate=allow_degenerate)

    def __call__(self, t):
        if self.constant:
            return self.coeffs[0]
        return _poly_in_t(self.coeffs, float(t))

    def sqrt(self, t):
        if self.constant:
            return self._sqrt
        return _psd_sqrt(self(t))

    def eig_range(self, horizon, n_grid=101):
        lo, hi = np.inf, -np.inf
        for t in np.linspace(0.0, horizon, 1 if self.constant else n_grid):
            lam = self(t)
            if not np.allclose(lam, lam.T, atol=1e-12):
                raise ValueError(f"diffusion matrix is not symmetric at t={t}")
            ev = np.linalg.eigvalsh(lam)
            lo, hi = min(lo, ev[0]), max(hi, ev[-1])
        return float(lo), float(hi)

    def to_dict(self):
        return {"coeffs": [c.tolist() for c in self.coeffs], "allow_degenerate": self.allow_degenerate}


def _psd_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


class InitLaw:
    """Initial law of X_0: a point mass or a Gaussian."""

    def __init__(self, kind, mean, cov=None):
        if kind not in ("point", "gaussian"):
            raise ValueError(f"unknown initial law {kind!r}")
        self.kind = kind
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        d = self.mean.shape[0]
        self.cov = None if kind == "point" else check_square_matrix(cov, d, "init covariance")
        self._chol = None if kind == "point" else _psd_sqrt(self.cov)

    def sample(self, rng, m):
        if self.kind == "point":
            return np.tile(self.mean, (m, 1))
        z = rng.standard_normal((m, self.mean.shape[0]))
        return self.mean + z @ self._chol.T

    def to_dict(self):
        out = {"kind": self.kind, "mean": self.mean.tolist()}
        if self.cov is not None:
            out["cov"] = self.cov.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["mean"], d.get("cov"))


@dataclass(frozen=True)
class DiffusionSpec:
    """Drift, diffusion matrix, horizon and initial law of the reference SDE."""

    dim: int
    horizon: float
    drift: object
    diffusion: DiffusionMatrix
    init: InitLaw
    eig_bounds: tuple = field(init=False, compare=False)

    def __post_init__(self):
        check_count(self.dim, "dim", minimum=1)
        check_positive(self.horizon, "horizon")
        if self.init.mean.shape[0] != self.dim:
            raise ValueError("initial law dimension does not match dim")
        if self.diffusion.coeffs[0].shape != (self.dim, self.dim):
            raise ValueError("diffusion matrix dimension does not match dim")
        lo, hi = self.diffusion.eig_range(self.horizon)
        if lo <= 0 and not self.diffusion.allow_degenerate:
            raise ValueError(f"diffusion matrix must be positive definite on [0, T]; min eigenvalue {lo:g}")
        object.__setattr__(self, "eig_bounds", (lo, hi))

    @property
    def lambda_min(self):
        return self.eig_bounds[0]

    @property
    def lambda_max(self):
        return self.eig_bounds[1]

    def to_dict(self):
        return {
            "dim": self.dim,
            "horizon": self.horizon,
            "drift": self.drift.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "init": self.init.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        dim = int(d["dim"])
        diff = d["diffusion"]
        return cls(
            dim=dim,
            horizon=float(d["horizon"]),
            drift=drift_from_dict(d["drift"], dim),
            diffusion=DiffusionMatrix(diff["coeffs"], diff.get("allow_degenerate", False)),
            init=InitLaw.from_dict(d["init"]),
        )

    def digest(self):
        return content_digest(self.to_dict())


def content_digest(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def ou_spec(theta, sigma2, horizon, x0=None, init_var=None, mu=0.0, dim=1):
    """Scalar-rate OU process ``dX = -theta (X - mu) dt + sqrt(sigma2) dB``.

    With ``init_var`` given, X_0 ~ N(mu, init_var I); otherwise X_0 = x0 (default mu).
    """
    mu_vec = np.full(dim, float(mu)) if np.ndim(mu) == 0 else np.asarray(mu, dtype=float)
    if init_var is not None:
        init = InitLaw("gaussian", mu_vec, float(init_var) * np.eye(dim))
    else:
        init = InitLaw("point", mu_vec if x0 is None else np.broadcast_to(np.asarray(x0, dtype=float), (dim,)))
    return DiffusionSpec(dim, float(horizon), OUDrift(theta, mu_vec), DiffusionMatrix.scalar(sigma2, dim), init)


# -- operations ---------------------------------------------------------------


def drift_eval(spec, t, x):
    """Evaluate ``b_t(x)`` at one or many states; returns shape (N, d)."""
    xs = check_states(x, spec.dim)
    ts = check_times(t, xs.shape[0], spec.horizon)
    out = spec.drift(ts if np.ndim(t) else float(t), xs)
    bad = ~np.all(np.isfinite(out), axis=1)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NonFiniteDriftError(f"drift is not finite at t={float(ts[i])!r}, x={xs[i].tolist()!r}")
    return out


def generator_apply(spec, t, x, grad, hess):
    """Apply the generator: ``<b_t(x), grad> + 0.5 Tr(Lambda_t hess)``."""
    xs = check_states(x, spec.dim)
    g = np.asarray(grad, dtype=float).reshape(-1)
    h = check_square_matrix(hess, spec.dim, "hess")
    if g.shape[0] != spec.dim:
        raise ValueError(f"grad has length {g.shape[0]}, expected {spec.dim}")
    b = drift_eval(spec, t, xs)[0]
    return float(b @ g + 0.5 * np.sum(spec.diffusion(float(t)) * h))


def time_grid(t0, horizon, dt):
    """Uniform grid from t0 to horizon; dt must divide the span."""
    dt = check_positive(dt, "dt")
    span = horizon - t0
    if span < 0:
        raise ValueError(f"start time {t0} exceeds horizon {horizon}")
    n_steps = int(round(span / dt))
    if abs(n_steps * dt - span) > 1e-12 * max(horizon, 1.0) * max(n_steps, 1):
        raise ValueError(f"dt={dt} does not divide the interval [{t0}, {horizon}]")
    grid = t0 + dt * np.arange(n_steps + 1)
    grid[-1] = horizon
    return grid


def chunk_rng(seed, chunk):
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(chunk),))
    return np.random.Generator(np.random.Philox(ss))


def propagate(spec, n, dt, seed, make_visitor, policy=None, t0=0.0, x0=None,
              blowup=DEFAULT_BLOWUP, threads=None):
    """Run Euler-Maruyama over ``n`` paths and feed every grid node to visitors.

    ``make_visitor(rows)`` builds one visitor per chunk of paths; the visitor's
    ``visit(step, t, x, action, dB)`` is called at every node with the
    Brownian increment used to leave that node (None at the final node), and
    its ``result()`` is collected. Returns ``(results, failed)`` with results in
    chunk order and the global indices of paths that blew up.
    """
    n = check_count(n, "n", minimum=1)
    grid = time_grid(t0, spec.horizon, dt)
    starts = list(range(0, n, CHUNK_SIZE))
    x_start = None if x0 is None else check_states(x0, spec.dim)

    def run(ci):
        lo = starts[ci]
        rows = slice(lo, min(lo + CHUNK_SIZE, n))
        m = rows.stop - rows.start
        rng = chunk_rng(seed, ci)
        if x_start is None:
            x = spec.init.sample(rng, m)
        else:
            x = np.broadcast_to(x_start, (m, spec.dim)).copy() if x_start.shape[0] == 1 else x_start[rows].copy()
        visitor = make_visitor(rows)
        alive = np.ones(m, dtype=bool)
        sqdt = np.sqrt(dt)
        last = len(grid) - 1
        for step, t in enumerate(grid):
            action = None if policy is None else policy(t, x)
            if step == last:
                visitor.visit(step, t, x, action, None)
                break
            dB = rng.standard_normal((m, spec.dim)) * sqdt
            visitor.visit(step, t, x, action, dB)
            drift = spec.drift(t, x)
            if action is not None:
                drift = drift + action
            x = x + drift * dt + dB @ spec.diffusion.sqrt(t).T
            with np.errstate(invalid="ignore"):
                out = ~(np.max(np.abs(x), axis=1) <= blowup)
            if np.any(out & alive):
                alive &= ~out
                x[~alive] = np.nan
        return visitor.result(), np.flatnonzero(~alive) + rows.start

    workers = threads or _THREADS
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(run, range(len(starts))))
    else:
        outs = [run(ci) for ci in range(len(starts))]
    results = [o[0] for o in outs]
    failed = np.concatenate([o[1] for o in outs]) if outs else np.zeros(0, dtype=int)
    if failed.size:
        logger.warning("%d of %d paths exceeded the blow-up bound %g", failed.size, n, blowup)
    return results, failed


@dataclass
class PathBatch:
    """Simulated states on a uniform grid, shape (n_paths, L + 1, d)."""

    states: np.ndarray
    grid: np.ndarray
    dt: float
    seed: int
    increments: np.ndarray = None
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def brownian_increments_retained(self):
        return self.increments is not None


class _StoreVisitor:
    def __init__(self, m, n_nodes, dim, keep_increments):
        self.states = np.empty((m, n_nodes, dim))
        self.incs = np.empty((m, n_nodes - 1, dim)) if keep_increments else None

    def visit(self, step, t, x, action, dB):
        self.states[:, step] = x
        if dB is not None and self.incs is not None:
            self.incs[:, step] = dB

    def result(self):
        return self.states, self.incs


def simulate_paths(spec, n, dt, seed, policy=None, keep_increments=False, blowup=DEFAULT_BLOWUP,
                   threads=None, t0=0.0, x0=None):
    """Simulate full paths of the (optionally controlled) diffusion.

    Paths that exceed ``blowup`` are frozen at NaN from that step on and listed
    in ``PathBatch.failed``; nothing is dropped.
    """
    grid = time_grid(t0, spec.horizon, dt)

    def make(rows):
        return _StoreVisitor(rows.stop - rows.start, len(grid), spec.dim, keep_increments)

    results, failed = propagate(spec, n, dt, seed, make, policy=policy, t0=t0, x0=x0,
                                blowup=blowup, threads=threads)
    states = np.concatenate([r[0] for r in results])
    incs = np.concatenate([r[1] for r in results]) if keep_increments else None
    return PathBatch(states=states, grid=grid, dt=float(dt), seed=int(seed), increments=incs, failed=failed)


def diffusion_at(spec, t, n):
    """``Lambda_t`` broadcast to shape (n, d, d) for scalar or per-point times."""
    if spec.diffusion.constant:
        return np.broadcast_to(spec.diffusion.coeffs[0], (n, spec.dim, spec.dim))
    if np.ndim(t) == 0:
        return np.broadcast_to(spec.diffusion(float(t)), (n, spec.dim, spec.dim))
    return _poly_in_t(spec.diffusion.coeffs, t)


def generator_batch(spec, t, x, grad, hess):
    """Vectorized generator: grad (N, d) and hess (N, d, d) give A f at N points."""
    b = spec.drift(t, x)
    lam = diffusion_at(spec, t, x.shape[0])
    return np.einsum("nd,nd->n", b, grad) + 0.5 * np.einsum("nij,nij->n", lam, hess)
