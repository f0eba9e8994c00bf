"""Energy inner products and the parabolic bilinear form, empirical and population.

For a linear class ``f = theta . phi`` everything reduces to three arrays:

* ``gram_E[j, l] = E(phi_j, phi_l)``, the Sobolev energy inner product;
* ``M[j, l] = B(phi_l, phi_j)``, the part of the form that is linear in f;
* ``bvec[j]``, the part driven by the target (``exp(Y/alpha)`` terms for data,
  ``B[f*, phi_j]`` for a known solution),

so that ``B(f_target - f_theta, phi_j) = bvec[j] - (M @ theta)[j]``.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e, legendre

from .diffusion import OUDrift, diffusion_at, generator_batch, _psd_sqrt
from .fnclass import ValueModel, features

_BLOCK = 16384


def potential(reward_values, alpha, scaling="alpha_r"):
    """Coefficient of f in the linear PDE: ``alpha r`` or ``r / alpha``."""
    if scaling == "alpha_r":
        return alpha * reward_values
    if scaling == "r_over_alpha":
        return reward_values / alpha
    raise ValueError(f"unknown potential scaling {scaling!r}")


@dataclass
class FormContext:
    """Assembled Gram matrix and affine bilinear-form operator over a basis."""

    basis: object
    gram_E: np.ndarray
    M: np.ndarray
    bvec: np.ndarray
    alpha: float
    diffusion: object = None
    dataset: object = None
    kind: str = "empirical"
    cache: dict = field(default_factory=dict, repr=False)

    def bilinear_vector(self, theta):
        """``c[j] = B(f_theta, phi_j)`` in the empirical convention (affine in theta)."""
        return self.bvec - self.M @ np.asarray(theta, dtype=float)

    def energy(self, u, v=None):
        v = u if v is None else v
        return float(np.asarray(u) @ self.gram_E @ np.asarray(v))


def _generator_features(diff, t, x, fb):
    b = diff.drift(t, x)
    lam = diffusion_at(diff, t, x.shape[0])
    return np.einsum("nd,npd->np", b, fb.grad) + 0.5 * np.einsum("nij,npij->np", lam, fb.hess)


def assemble(dataset, basis, diff, alpha, scaling="alpha_r"):
    """Build the empirical energy Gram matrix and bilinear operator from data.

    The interior sums use ``T / (n K)`` weights; each observation's
    ``(d/dt + A + alpha R) phi`` row is cached alongside ``phi``.
    """
    if dataset.n == 0:
        raise ValueError("cannot assemble forms over an empty dataset")
    if basis.dim != dataset.dim or basis.dim != diff.dim:
        raise ValueError(f"dimension mismatch: basis {basis.dim}, dataset {dataset.dim}, diffusion {diff.dim}")
    if abs(basis.horizon - dataset.T) > 1e-12 * dataset.T:
        raise ValueError("basis horizon differs from the dataset horizon")
    n, K, T = dataset.n, dataset.K, dataset.T
    p = basis.n_features
    phi_T = features(basis, T, dataset.xT, hessian=False).phi
    phi_0 = features(basis, 0.0, dataset.x0, hessian=False).phi
    expY = np.exp(dataset.Y / alpha)
    gram = (phi_T.T @ phi_T + phi_0.T @ phi_0) / n
    M = phi_T.T @ phi_T / n
    bvec = phi_T.T @ expY / n
    t_flat = dataset.t_obs.reshape(-1)
    x_flat = dataset.x_obs.reshape(-1, basis.dim)
    R_flat = dataset.R.reshape(-1)
    phi_obs = np.empty((t_flat.shape[0], p))
    Lphi_obs = np.empty((t_flat.shape[0], p))
    if K:
        w = T / (n * K)
        for lo in range(0, t_flat.shape[0], _BLOCK):
            sl = slice(lo, lo + _BLOCK)
            fb = features(basis, t_flat[sl], x_flat[sl])
            Lphi = fb.dphi_dt + _generator_features(diff, t_flat[sl], x_flat[sl], fb) \
                + potential(R_flat[sl], alpha, scaling)[:, None] * fb.phi
            phi_obs[sl] = fb.phi
            Lphi_obs[sl] = Lphi
            gram += w * (fb.phi.T @ fb.phi + np.einsum("npd,nqd->pq", fb.grad, fb.grad))
            M -= w * (fb.phi.T @ Lphi)
    gram = 0.5 * (gram + gram.T)
    cache = {"phi_T": phi_T, "phi_0": phi_0, "expY": expY, "phi_obs": phi_obs, "Lphi_obs": Lphi_obs}
    return FormContext(basis, gram, M, bvec, float(alpha), diff, dataset, "empirical", cache)


def _coeffs(ctx, f):
    if isinstance(f, ValueModel):
        if f.basis != ctx.basis:
            raise ValueError("model basis does not match the assembled basis")
        return f.theta
    return np.asarray(f, dtype=float)


def empirical_bilinear(ctx, f, g_coeffs=None):
    """Empirical bilinear form ``B_n(f, g)``.

    ``f`` is a ValueModel (or coefficient vector) over the context basis.
    With ``g_coeffs`` omitted the vector ``c[j] = B_n(f, phi_j)`` is returned.
    """
    c = ctx.bilinear_vector(_coeffs(ctx, f))
    if g_coeffs is None:
        return c
    return float(c @ np.asarray(g_coeffs, dtype=float))


def bilinear_terms(ctx, theta_f, theta_g):
    """Per-sample terminal and interior contributions of ``B_n(f, g)``.

    Used to form bootstrap standard errors and magnitude scales.
    Returns ``(terminal, interior)`` arrays of shape (n,) and (n, K), already
    weighted so that ``terminal.sum() + interior.sum() == B_n(f, g)``.
    """
    c = ctx.cache
    ds = ctx.dataset
    gT = c["phi_T"] @ theta_g
    term = (c["expY"] - c["phi_T"] @ theta_f) * gT / ds.n
    if ds.K:
        inter = ((c["Lphi_obs"] @ theta_f) * (c["phi_obs"] @ theta_g)).reshape(ds.n, ds.K) * ds.T / (ds.n * ds.K)
    else:
        inter = np.zeros((ds.n, 0))
    return term, inter


# -- population forms via quadrature -------------------------------------------


@dataclass
class QuadratureRule:
    """Weighted nodes approximating the law of the reference process.

    ``sum(w * h(t, x))`` over interior nodes approximates the time integral of
    ``E[h(t, X_t)]``; the boundary node sets approximate ``E[h(0, X_0)]`` and
    ``E[h(T, X_T)]``.
    """

    t: np.ndarray
    x: np.ndarray
    w: np.ndarray
    x0: np.ndarray
    w0: np.ndarray
    xT: np.ndarray
    wT: np.ndarray
    horizon: float
    kind: str = "cloud"

    @classmethod
    def from_paths(cls, batch, stride=1):
        """Empirical measure of a path cloud with trapezoidal time weights.

        ``stride`` keeps every stride-th grid node; it must divide the step count.
        """
        L = batch.grid.shape[0] - 1
        if L % stride:
            raise ValueError(f"stride {stride} does not divide the {L} simulation steps")
        keep = np.setdiff1d(np.arange(batch.n_paths), batch.failed)
        states = batch.states[keep]
        N = states.shape[0]
        nodes = np.arange(0, L + 1, stride)
        h = batch.dt * stride
        tw = np.full(nodes.shape[0], h)
        tw[0] = tw[-1] = h / 2
        t = np.repeat(batch.grid[nodes], N)
        x = states[:, nodes].transpose(1, 0, 2).reshape(-1, states.shape[2])
        w = np.repeat(tw / N, N)
        ones = np.full(N, 1.0 / N)
        return cls(t, x, w, states[:, 0], ones, states[:, -1], ones, float(batch.grid[-1]), "cloud")

    @classmethod
    def ou_gauss(cls, diff, n_time=48, n_hermite=64):
        """Exact Gaussian marginals of an OU process: Gauss-Legendre in time,
        tensor Gauss-Hermite in space. Requires OU drift and constant Lambda."""
        if not isinstance(diff.drift, OUDrift) or not diff.diffusion.constant:
            raise ValueError("Gauss-Hermite quadrature needs an OU drift with constant diffusion")
        d = diff.dim
        th, mu = diff.drift.theta, diff.drift.mu
        lam = diff.diffusion.coeffs[0]
        m0 = diff.init.mean
        S0 = np.zeros((d, d)) if diff.init.cov is None else diff.init.cov
        z1, w1 = hermite_e.hermegauss(n_hermite)
        w1 = w1 / np.sqrt(2 * np.pi)
        grids = np.meshgrid(*([z1] * d), indexing="ij")
        Z = np.stack([g.ravel() for g in grids], axis=1)
        WZ = np.prod(np.meshgrid(*([w1] * d), indexing="ij"), axis=0).ravel()

        def marginal(t):
            e = np.exp(-th * t)
            mean = mu + e * (m0 - mu)
            var = (1 - e * e) / (2 * th) if th != 0 else t
            cov = e * e * S0 + var * lam
            return mean + Z @ _psd_sqrt(cov).T

        s, ws = legendre.leggauss(n_time)
        T = diff.horizon
        times = 0.5 * T * (s + 1)
        tw = 0.5 * T * ws
        x = np.concatenate([marginal(t) for t in times])
        t = np.repeat(times, Z.shape[0])
        w = np.concatenate([tw_i * WZ for tw_i in tw])
        return cls(t, x, w, marginal(0.0), WZ.copy(), marginal(T), WZ.copy(), float(T), "ou_gauss")


def _derivs(f, t, x):
    if hasattr(f, "derivatives"):
        return f.derivatives(t, x)
    return f.value(t, x), f.time_derivative(t, x), f.gradient(t, x), f.hessian(t, x)


def _value_grad(f, t, x):
    if hasattr(f, "derivatives"):
        v, _, g, _ = f.derivatives(t, x, hessian=False)
        return v, g
    return f.value(t, x), f.gradient(t, x)


def quadrature_bilinear(f, g, diff, reward, alpha, cloud, scaling="alpha_r"):
    """Population ``B[f, g] = E[f_T g_T] - int E[(d/dt + A + alpha r) f * g] dt``.

    ``cloud`` is a QuadratureRule or a PathBatch (converted with stride 1).
    """
    q = cloud if isinstance(cloud, QuadratureRule) else QuadratureRule.from_paths(cloud)
    fT = f.value(q.horizon, q.xT)
    gT = g.value(q.horizon, q.xT)
    total = float(np.sum(q.wT * fT * gT))
    for lo in range(0, q.t.shape[0], _BLOCK):
        sl = slice(lo, lo + _BLOCK)
        t, x = q.t[sl], q.x[sl]
        v, vt, gr, he = _derivs(f, t, x)
        Lf = vt + generator_batch(diff, t, x, gr, he) + potential(reward.intermediate(t, x), alpha, scaling) * v
        total -= float(np.sum(q.w[sl] * Lf * g.value(t, x)))
    return total


def quadrature_energy(f, g, cloud):
    """Population Sobolev energy inner product with boundary terms."""
    q = cloud if isinstance(cloud, QuadratureRule) else QuadratureRule.from_paths(cloud)
    total = float(np.sum(q.w0 * f.value(0.0, q.x0) * g.value(0.0, q.x0)))
    total += float(np.sum(q.wT * f.value(q.horizon, q.xT) * g.value(q.horizon, q.xT)))
    for lo in range(0, q.t.shape[0], _BLOCK):
        sl = slice(lo, lo + _BLOCK)
        t, x = q.t[sl], q.x[sl]
        fv, fg = _value_grad(f, t, x)
        gv, gg = _value_grad(g, t, x)
        total += float(np.sum(q.w[sl] * (fv * gv + np.sum(fg * gg, axis=1))))
    return total


def population_context(basis, diff, reward, alpha, cloud, fstar=None, scaling="alpha_r"):
    """Population analogue of :func:`assemble` over a quadrature rule.

    ``bvec[j] = B[fstar, phi_j]`` when a reference solution is supplied.
    """
    q = cloud if isinstance(cloud, QuadratureRule) else QuadratureRule.from_paths(cloud)
    p = basis.n_features
    phi0 = features(basis, 0.0, q.x0, hessian=False).phi
    phiT = features(basis, q.horizon, q.xT, hessian=False).phi
    gram = phi0.T @ (q.w0[:, None] * phi0) + phiT.T @ (q.wT[:, None] * phiT)
    M = phiT.T @ (q.wT[:, None] * phiT)
    for lo in range(0, q.t.shape[0], _BLOCK):
        sl = slice(lo, lo + _BLOCK)
        t, x, w = q.t[sl], q.x[sl], q.w[sl]
        fb = features(basis, t, x)
        Lphi = fb.dphi_dt + _generator_features(diff, t, x, fb) \
            + potential(reward.intermediate(t, x), alpha, scaling)[:, None] * fb.phi
        gram += fb.phi.T @ (w[:, None] * fb.phi) + np.einsum("n,npd,nqd->pq", w, fb.grad, fb.grad)
        M -= fb.phi.T @ (w[:, None] * Lphi)
    gram = 0.5 * (gram + gram.T)
    bvec = np.zeros(p)
    if fstar is not None:
        if isinstance(fstar, ValueModel) and fstar.basis == basis:
            bvec = M @ fstar.theta
        else:
            bvec = np.array([quadrature_bilinear(fstar, _Unit(basis, j), diff, reward, alpha, q, scaling)
                             for j in range(p)])
    return FormContext(basis, gram, M, bvec, float(alpha), diff, None, "population", {"rule": q})


class _Unit:
    """The single basis function phi_j as a value-only object."""

    def __init__(self, basis, j):
        self.basis, self.j = basis, j

    def value(self, t, x):
        return features(self.basis, t, x, hessian=False).phi[:, self.j]
