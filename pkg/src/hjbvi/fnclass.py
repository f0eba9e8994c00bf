"""Ball-constrained linear function class over a time-Legendre x spatial basis.

Each feature is ``P_l(2t/T - 1) * psi_j(x)`` with ``P_l`` the Legendre
polynomial of degree ``l <= time_degree`` and ``psi_j`` a Gaussian RBF or a
monomial. Values, time derivatives, spatial gradients and Hessians are
analytic. Feature index ``l * n_spatial + j``.
"""

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial import legendre

from . import _io
from ._validation import check_count, check_positive, check_states, check_times


class FeatureBlock(NamedTuple):
    phi: np.ndarray  # (N, p)
    dphi_dt: np.ndarray  # (N, p)
    grad: np.ndarray  # (N, p, d)
    hess: np.ndarray  # (N, p, d, d) or None


def rbf(center, width):
    return {"kind": "rbf", "center": [float(c) for c in np.atleast_1d(center)], "width": float(width)}


def monomial(powers):
    return {"kind": "monomial", "powers": [int(p) for p in powers]}


def monomials_up_to(dim, degree):
    """All monomial descriptors of total degree <= ``degree``, constant first."""
    out = []
    for total in range(degree + 1):
        for powers in itertools.product(range(total + 1), repeat=dim):
            if sum(powers) == total:
                out.append(monomial(powers))
    return out


def rbf_grid(lo, hi, count, width):
    """1-D RBF descriptors with evenly spaced centers on [lo, hi]."""
    return [rbf([c], width) for c in np.linspace(lo, hi, count)]


@dataclass(frozen=True)
class BasisSpec:
    """Tensor basis: Legendre in time up to ``time_degree`` times spatial features."""

    time_degree: int
    spatial: tuple
    dim: int
    horizon: float

    def __post_init__(self):
        check_count(self.time_degree, "time_degree")
        check_count(self.dim, "dim", minimum=1)
        check_positive(self.horizon, "horizon")
        if not self.spatial:
            raise ValueError("basis needs at least one spatial feature")
        object.__setattr__(self, "spatial", tuple(_freeze(s) for s in self.spatial))
        for s in self.spatial:
            if s["kind"] == "rbf":
                if len(s["center"]) != self.dim:
                    raise ValueError(f"RBF center {s['center']} does not match dim {self.dim}")
                check_positive(s["width"], "RBF width")
            elif s["kind"] == "monomial":
                if len(s["powers"]) != self.dim or min(s["powers"]) < 0:
                    raise ValueError(f"bad monomial powers {s['powers']}")
            else:
                raise ValueError(f"unknown spatial feature kind {s['kind']!r}")

    @property
    def n_spatial(self):
        return len(self.spatial)

    @property
    def n_features(self):
        return (self.time_degree + 1) * self.n_spatial

    def to_dict(self):
        return {"time_degree": self.time_degree, "dim": self.dim, "horizon": self.horizon,
                "spatial": [dict(s) for s in self.spatial]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["time_degree"]), tuple(d["spatial"]), int(d["dim"]), float(d["horizon"]))


class _Frozen(dict):
    def __hash__(self):
        return hash(_io.dumps(self))

    def __setitem__(self, key, value):
        raise TypeError("feature descriptors are immutable")

    def __reduce__(self):
        return _Frozen, (dict(self),)

    def __deepcopy__(self, memo):
        return self


def _freeze(s):
    s = dict(s)
    if s["kind"] == "rbf":
        s = rbf(s["center"], s["width"])
    elif s["kind"] == "monomial":
        s = monomial(s["powers"])
    return _Frozen(s)


# -- feature evaluation -------------------------------------------------------


def _legendre_blocks(basis, t):
    s = 2.0 * t / basis.horizon - 1.0
    m = basis.time_degree
    vals = legendre.legvander(s, m)
    dvals = np.zeros_like(vals)
    for l in range(1, m + 1):
        dvals[:, l] = legendre.legval(s, legendre.legder(np.eye(m + 1)[l]))
    return vals, dvals * (2.0 / basis.horizon)


def _mono_deriv(x, powers, order):
    # d^order / dx^order of prod x_j**powers_j, order a per-coordinate multi-index
    out = np.ones(x.shape[0])
    for j, (p, a) in enumerate(zip(powers, order)):
        if a > p:
            return np.zeros(x.shape[0])
        if p - a:
            out = out * x[:, j] ** (p - a)
        out = out * (math.factorial(p) // math.factorial(p - a))
    return out


def _spatial_blocks(basis, x, hessian):
    n, d = x.shape
    S = basis.n_spatial
    psi = np.empty((n, S))
    grad = np.empty((n, S, d))
    hess = np.empty((n, S, d, d)) if hessian else None
    eye = np.eye(d, dtype=int)
    for j, s in enumerate(basis.spatial):
        if s["kind"] == "rbf":
            w2 = s["width"] ** 2
            diff = x - np.asarray(s["center"])
            v = np.exp(-0.5 * np.sum(diff * diff, axis=1) / w2)
            psi[:, j] = v
            grad[:, j] = -diff / w2 * v[:, None]
            if hessian:
                hess[:, j] = (np.einsum("ni,nk->nik", diff, diff) / w2 ** 2 - np.eye(d) / w2) * v[:, None, None]
        else:
            p = s["powers"]
            psi[:, j] = _mono_deriv(x, p, [0] * d)
            for i in range(d):
                grad[:, j, i] = _mono_deriv(x, p, eye[i])
                if hessian:
                    for k in range(i, d):
                        h = _mono_deriv(x, p, eye[i] + eye[k])
                        hess[:, j, i, k] = h
                        hess[:, j, k, i] = h
    return psi, grad, hess


def features(basis, t, x, hessian=True):
    """Evaluate all features and their derivative blocks at N points.

    Parameters
    ----------
    basis : BasisSpec
    t : float or array of shape (N,)
    x : array of shape (N, d)
    hessian : bool
        Whether to build the (N, p, d, d) Hessian block.

    Returns
    -------
    FeatureBlock
    """
    xs = check_states(x, basis.dim)
    n = xs.shape[0]
    ts = check_times(t, n, basis.horizon)
    P, dP = _legendre_blocks(basis, ts)
    psi, gpsi, hpsi = _spatial_blocks(basis, xs, hessian)
    p = basis.n_features
    mul = lambda a, b: np.multiply(a, b, order="C")
    phi = mul(P[:, :, None], psi[:, None, :]).reshape(n, p)
    dphi = mul(dP[:, :, None], psi[:, None, :]).reshape(n, p)
    grad = mul(P[:, :, None, None], gpsi[:, None]).reshape(n, p, basis.dim)
    hess = None
    if hessian:
        hess = mul(P[:, :, None, None, None], hpsi[:, None]).reshape(n, p, basis.dim, basis.dim)
    return FeatureBlock(phi, dphi, grad, hess)


# -- models -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValueModel:
    """``f = theta . phi`` with ``||theta||_2 <= ball_radius``."""

    basis: BasisSpec
    theta: np.ndarray
    ball_radius: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.basis.n_features:
            raise ValueError(f"theta has {theta.shape[0]} entries, basis has {self.basis.n_features}")
        check_positive(self.ball_radius, "ball_radius")
        if np.linalg.norm(theta) > self.ball_radius + 1e-9:
            raise ValueError(f"||theta|| = {np.linalg.norm(theta):.6g} exceeds ball radius {self.ball_radius:g}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def value(self, t, x):
        return features(self.basis, t, x, hessian=False).phi @ self.theta

    def time_derivative(self, t, x):
        return features(self.basis, t, x, hessian=False).dphi_dt @ self.theta

    def gradient(self, t, x):
        return np.einsum("npd,p->nd", features(self.basis, t, x, hessian=False).grad, self.theta)

    def hessian(self, t, x):
        return np.einsum("npij,p->nij", features(self.basis, t, x).hess, self.theta)

    def derivatives(self, t, x, hessian=True):
        """Value, time derivative, gradient and Hessian from one feature pass."""
        fb = features(self.basis, t, x, hessian=hessian)
        hess = np.einsum("npij,p->nij", fb.hess, self.theta) if hessian else None
        return fb.phi @ self.theta, fb.dphi_dt @ self.theta, np.einsum("npd,p->nd", fb.grad, self.theta), hess

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "theta": self.theta.tolist(), "ball_radius": self.ball_radius}

    @classmethod
    def from_dict(cls, d):
        return cls(BasisSpec.from_dict(d["basis"]), np.asarray(d["theta"], dtype=float), float(d["ball_radius"]))


def evaluate(model, t, x):
    return model.value(t, x)


def grad_x(model, t, x):
    return model.gradient(t, x)


def hess_x(model, t, x):
    return model.hessian(t, x)


def d_dt(model, t, x):
    return model.time_derivative(t, x)


def project_ball(theta, rho):
    """Euclidean projection onto the centered ball of radius ``rho``."""
    rho = check_positive(rho, "rho")
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm <= rho:
        return theta.copy()
    return theta * (rho / norm)


def save_model(model, path):
    _io.write_json(path, model.to_dict())


def load_model(path):
    return ValueModel.from_dict(_io.read_json(path))


def separable_model(basis, time_poly, spatial_weights, ball_radius):
    """Model ``a(t) * sum_j w_j psi_j(x)`` with ``a`` given by power-basis coefficients in t.

    ``a`` must have degree <= ``basis.time_degree``; the Legendre coefficients
    are obtained exactly by change of variable.
    """
    a = np.polynomial.Polynomial(np.asarray(time_poly, dtype=float))
    if a.degree() > basis.time_degree:
        raise ValueError(f"time polynomial degree {a.degree()} exceeds basis time_degree {basis.time_degree}")
    w = np.asarray(spatial_weights, dtype=float)
    if w.shape != (basis.n_spatial,):
        raise ValueError(f"expected {basis.n_spatial} spatial weights, got shape {w.shape}")
    in_s = a(np.polynomial.Polynomial([basis.horizon / 2, basis.horizon / 2]))
    leg = legendre.poly2leg(in_s.coef)
    coef = np.zeros(basis.time_degree + 1)
    coef[:leg.shape[0]] = leg
    return ValueModel(basis, np.outer(coef, w).ravel(), ball_radius)
