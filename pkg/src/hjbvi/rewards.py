"""Intermediate and terminal reward models, observation noise, and rescaling."""

from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_positive, check_states, check_times
from .diffusion import content_digest, generator_batch


class RewardBoundError(ValueError):
    """A sampled reward breaks the normalized bounds."""


def _as_vec(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


# -- intermediate reward functions --------------------------------------------


class ConstantReward:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t, x):
        return np.full(x.shape[0], self.value)

    def bounds(self):
        return self.value, self.value

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


class AffineReward:
    """``r(x) = offset + slope . x`` (unbounded unless the state is)."""

    def __init__(self, offset, slope):
        self.offset = float(offset)
        self.slope = _as_vec(slope)

    def __call__(self, t, x):
        return self.offset + x @ self.slope

    def bounds(self):
        if np.any(self.slope):
            return -np.inf, np.inf
        return self.offset, self.offset

    def to_dict(self):
        return {"kind": "affine", "offset": self.offset, "slope": self.slope.tolist()}


class TanhReward:
    """``r(x) = offset + scale * tanh(slope . x)``."""

    def __init__(self, offset, scale, slope):
        self.offset = float(offset)
        self.scale = float(scale)
        self.slope = _as_vec(slope)

    def __call__(self, t, x):
        return self.offset + self.scale * np.tanh(x @ self.slope)

    def bounds(self):
        return self.offset - abs(self.scale), self.offset + abs(self.scale)

    def to_dict(self):
        return {"kind": "tanh", "offset": self.offset, "scale": self.scale, "slope": self.slope.tolist()}


class ManufacturedReward:
    """Running reward that makes a chosen positive ``fstar`` solve the linear PDE.

    With ``scaling='alpha_r'`` the PDE is ``df/dt + A f + alpha r f = 0`` and
    ``r = -(df/dt + A f) / (alpha f)``; with ``'r_over_alpha'`` the potential is
    ``r / alpha`` and ``r = -alpha (df/dt + A f) / f``.
    """

    def __init__(self, fstar, diffusion, alpha, scaling="alpha_r"):
        self.fstar = fstar
        self.diffusion = diffusion
        self.alpha = float(alpha)
        self.scaling = scaling

    def residual_terms(self, t, x):
        f = self.fstar.value(t, x)
        lf = self.fstar.time_derivative(t, x) + generator_batch(
            self.diffusion, t, x, self.fstar.gradient(t, x), self.fstar.hessian(t, x))
        return f, lf

    def __call__(self, t, x):
        f, lf = self.residual_terms(t, x)
        if self.scaling == "alpha_r":
            return -lf / (self.alpha * f)
        return -self.alpha * lf / f

    def bounds(self):
        return -np.inf, np.inf

    def to_dict(self):
        return {"kind": "manufactured", "fstar": self.fstar.to_dict(), "diffusion": self.diffusion.to_dict(),
                "alpha": self.alpha, "scaling": self.scaling}


class TransformedReward:
    """``scale * inner + shift``."""

    def __init__(self, inner, scale, shift):
        self.inner = inner
        self.scale = float(scale)
        self.shift = float(shift)

    def __call__(self, t, x):
        return self.scale * self.inner(t, x) + self.shift

    def bounds(self):
        lo, hi = self.inner.bounds()
        a, b = self.scale * lo + self.shift, self.scale * hi + self.shift
        return min(a, b), max(a, b)

    def to_dict(self):
        return {"kind": "transformed", "inner": self.inner.to_dict(), "scale": self.scale, "shift": self.shift}


# -- terminal rewards ---------------------------------------------------------


class LinearTerminal:
    """``y(x) = c . x + offset``."""

    def __init__(self, c, offset=0.0):
        self.c = _as_vec(c)
        self.offset = float(offset)

    def __call__(self, x):
        return x @ self.c + self.offset

    def gradient(self, x):
        return np.broadcast_to(self.c, x.shape)

    def to_dict(self):
        return {"kind": "linear", "c": self.c.tolist(), "offset": self.offset}


class TanhTerminal:
    """``y(x) = scale * tanh(slope . x + shift)``; bounded by ``|scale|``."""

    def __init__(self, scale, slope, shift=0.0):
        self.scale = float(scale)
        self.slope = _as_vec(slope)
        self.shift = float(shift)

    def __call__(self, x):
        return self.scale * np.tanh(x @ self.slope + self.shift)

    def to_dict(self):
        return {"kind": "tanh", "scale": self.scale, "slope": self.slope.tolist(), "shift": self.shift}


class ManufacturedTerminal:
    """``y(x) = alpha log fstar_T(x)``, the terminal value matching ``fstar``."""

    def __init__(self, fstar, horizon, alpha):
        self.fstar = fstar
        self.horizon = float(horizon)
        self.alpha = float(alpha)

    def __call__(self, x):
        return self.alpha * np.log(self.fstar.value(self.horizon, x))

    def to_dict(self):
        return {"kind": "manufactured", "fstar": self.fstar.to_dict(), "horizon": self.horizon, "alpha": self.alpha}


class TransformedTerminal:
    def __init__(self, inner, scale):
        self.inner = inner
        self.scale = float(scale)

    def __call__(self, x):
        return self.scale * self.inner(x)

    def to_dict(self):
        return {"kind": "transformed", "inner": self.inner.to_dict(), "scale": self.scale}


# -- observation noise --------------------------------------------------------


class NoNoise:
    def sample(self, rng, mean):
        return np.array(mean, dtype=float)

    def scaled(self, c):
        return self

    def to_dict(self):
        return {"kind": "none"}


class UniformNoise:
    """``R = r + U``, ``U ~ Unif[-half_width, half_width]``."""

    def __init__(self, half_width):
        self.half_width = check_positive(half_width, "half_width", strict=False)

    def sample(self, rng, mean):
        return mean + rng.uniform(-self.half_width, self.half_width, size=np.shape(mean))

    def scaled(self, c):
        return UniformNoise(abs(c) * self.half_width)

    def to_dict(self):
        return {"kind": "uniform", "half_width": self.half_width}


class TwoPointNoise:
    """``R = r +/- spread`` with probability 1/2 each."""

    def __init__(self, spread):
        self.spread = check_positive(spread, "spread", strict=False)

    def sample(self, rng, mean):
        sign = 2.0 * rng.integers(0, 2, size=np.shape(mean)) - 1.0
        return mean + self.spread * sign

    def scaled(self, c):
        return TwoPointNoise(abs(c) * self.spread)

    def to_dict(self):
        return {"kind": "two_point", "spread": self.spread}


# -- reward spec --------------------------------------------------------------


@dataclass(frozen=True)
class RewardSpec:
    """Running reward r_t(x), terminal reward y(x) and the observation noise on r.

    ``normalized`` asserts that sampled rewards lie in ``[-r_max - 1, -1]`` and
    that ``|y| <= 1``; sampling enforces the first bound. ``manufactured``
    marks rewards reverse-engineered from a chosen solution, which bypass the
    normalized contract.
    """

    intermediate: object
    terminal: object
    noise: object = NoNoise()
    r_max: float = 1.0
    bound: float = None
    normalized: bool = False
    manufactured: bool = False
    dim: int = 1

    def to_dict(self):
        return {
            "dim": self.dim,
            "intermediate": self.intermediate.to_dict(),
            "terminal": self.terminal.to_dict(),
            "noise": self.noise.to_dict(),
            "r_max": self.r_max,
            "bound": self.bound,
            "normalized": self.normalized,
            "manufactured": self.manufactured,
        }

    def digest(self):
        return content_digest(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            intermediate=intermediate_from_dict(d["intermediate"]),
            terminal=terminal_from_dict(d["terminal"]),
            noise=noise_from_dict(d.get("noise", {"kind": "none"})),
            r_max=float(d.get("r_max", 1.0)),
            bound=d.get("bound"),
            normalized=bool(d.get("normalized", False)),
            manufactured=bool(d.get("manufactured", False)),
            dim=int(d.get("dim", 1)),
        )


def intermediate_from_dict(d):
    kind = d["kind"]
    if kind == "constant":
        return ConstantReward(d["value"])
    if kind == "affine":
        return AffineReward(d["offset"], d["slope"])
    if kind == "tanh":
        return TanhReward(d["offset"], d["scale"], d["slope"])
    if kind == "transformed":
        return TransformedReward(intermediate_from_dict(d["inner"]), d["scale"], d["shift"])
    if kind == "manufactured":
        from .diffusion import DiffusionSpec
        from .fnclass import ValueModel
        return ManufacturedReward(ValueModel.from_dict(d["fstar"]), DiffusionSpec.from_dict(d["diffusion"]),
                                  d["alpha"], d.get("scaling", "alpha_r"))
    raise ValueError(f"unknown intermediate reward kind {kind!r}")


def terminal_from_dict(d):
    kind = d["kind"]
    if kind == "linear":
        return LinearTerminal(d["c"], d.get("offset", 0.0))
    if kind == "tanh":
        return TanhTerminal(d["scale"], d["slope"], d.get("shift", 0.0))
    if kind == "transformed":
        return TransformedTerminal(terminal_from_dict(d["inner"]), d["scale"])
    if kind == "manufactured":
        from .fnclass import ValueModel
        return ManufacturedTerminal(ValueModel.from_dict(d["fstar"]), d["horizon"], d["alpha"])
    raise ValueError(f"unknown terminal reward kind {kind!r}")


def noise_from_dict(d):
    kind = d["kind"]
    if kind == "none":
        return NoNoise()
    if kind == "uniform":
        return UniformNoise(d["half_width"])
    if kind == "two_point":
        return TwoPointNoise(d["spread"])
    raise ValueError(f"unknown noise kind {kind!r}")


def reward_mean(reward, t, x):
    """Vectorized conditional mean r_t(x) at states x of shape (N, d)."""
    return reward.intermediate(t, x)


def sample_intermediate(reward, t, x, rng):
    """Draw noisy reward observations with conditional mean ``r_t(x)``.

    ``x`` may be one state or an (N, d) batch (``t`` scalar or per row); the
    return is a float for a single state and an (N,) array otherwise.
    """
    xs = check_states(x, reward.dim)
    ts = check_times(t, xs.shape[0])
    tt = float(ts[0]) if np.ndim(t) == 0 else ts
    R = reward.noise.sample(rng, reward.intermediate(tt, xs))
    if reward.normalized and not reward.manufactured:
        lo, hi = -reward.r_max - 1.0, -1.0
        bad = (R < lo - 1e-12) | (R > hi + 1e-12)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise RewardBoundError(f"reward {R[i]:.6g} at t={ts[i]:.6g} outside normalized range [{lo:g}, {hi:g}]")
    return float(R[0]) if np.ndim(x) <= 1 and xs.shape[0] == 1 else R


def terminal_eval(reward, x):
    """Exact terminal reward ``y(x)``; float for one state, (N,) array for a batch."""
    xs = check_states(x, reward.dim)
    y = reward.terminal(xs)
    return float(y[0]) if np.ndim(x) <= 1 and xs.shape[0] == 1 else y


def rescale_problem(reward, alpha, bound=None):
    """Map rewards bounded by B onto the normalized ranges without changing the policy.

    Uses the common scale ``c = 1/(2B)``: ``r' = c r - 3/2``, ``y' = c y``,
    ``alpha' = c alpha``, and ``r_max = 1``. Rewards in ``[-B, B]`` land in
    ``[-2, -1]`` and ``|y'| <= 1/2``.
    """
    B = bound if bound is not None else reward.bound
    if B is None or not np.isfinite(B) or B <= 0:
        raise ValueError(f"rescaling needs a positive reward bound B, got {B!r}")
    alpha = check_positive(alpha, "alpha")
    c = 1.0 / (2.0 * B)
    out = replace(
        reward,
        intermediate=TransformedReward(reward.intermediate, c, -1.5),
        terminal=TransformedTerminal(reward.terminal, c),
        noise=reward.noise.scaled(c),
        r_max=1.0,
        bound=None,
        normalized=True,
    )
    return out, c * alpha
