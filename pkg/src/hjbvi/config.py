"""Experiment configuration: validated JSON with dotted-key overrides."""

import copy
import json
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import _io
from .diffusion import DiffusionMatrix, DiffusionSpec, InitLaw, OUDrift, content_digest
from .fnclass import BasisSpec, monomials_up_to, rbf_grid, separable_model
from .oracle import OracleConfig, manufactured_problem
from .rewards import (ConstantReward, AffineReward, TanhReward, LinearTerminal, TanhTerminal, NoNoise,
                      UniformNoise, TwoPointNoise, RewardSpec, rescale_problem)
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class InitBlock(_Strict):
    kind: Literal["point", "gaussian"] = "gaussian"
    mean: Optional[List[float]] = None
    var: float = 1.0


class DiffusionBlock(_Strict):
    kind: Literal["ou"] = "ou"
    theta: float = Field(gt=0)
    sigma2: float = Field(gt=0)
    mu: float = 0.0
    init: InitBlock = InitBlock()


class IntermediateBlock(_Strict):
    kind: Literal["constant", "affine", "tanh"] = "constant"
    value: float = -1.0
    offset: float = 0.0
    scale: float = 1.0
    slope: Optional[List[float]] = None


class TerminalBlock(_Strict):
    kind: Literal["linear", "tanh"] = "linear"
    c: Optional[List[float]] = None
    scale: float = 1.0
    slope: Optional[List[float]] = None
    shift: float = 0.0


class NoiseBlock(_Strict):
    kind: Literal["none", "uniform", "two_point"] = "none"
    width: float = Field(0.0, ge=0)


class ManufacturedBlock(_Strict):
    time_poly: List[float]
    spatial_weights: List[float]


class RewardBlock(_Strict):
    intermediate: IntermediateBlock = IntermediateBlock()
    terminal: TerminalBlock = TerminalBlock()
    noise: NoiseBlock = NoiseBlock()
    r_max: float = Field(1.0, gt=0)
    bound: Optional[float] = Field(None, gt=0)
    normalized: bool = True


class ProblemBlock(_Strict):
    dim: int = Field(1, ge=1)
    horizon: float = Field(1.0, gt=0)
    alpha: float = Field(1.0, gt=0)
    diffusion: DiffusionBlock
    reward: RewardBlock = RewardBlock()
    manufactured: Optional[ManufacturedBlock] = None
    rescale: bool = False
    potential_scaling: Literal["alpha_r", "r_over_alpha"] = "alpha_r"


class DataBlock(_Strict):
    n: int = Field(ge=1)
    K: int = Field(ge=0)
    dt: float = Field(gt=0)
    seed: int


class RBFBlock(_Strict):
    lo: float
    hi: float
    count: int = Field(ge=1)
    width: float = Field(gt=0)


class BasisBlock(_Strict):
    time_degree: int = Field(3, ge=0)
    monomial_degree: int = Field(0, ge=-1)
    rbf: Optional[RBFBlock] = None


class SolverBlock(_Strict):
    gamma: Optional[float] = Field(None, ge=0)
    max_iters: int = Field(500, ge=0)
    ball_radius: float = Field(100.0, gt=0)
    ridge: Optional[float] = Field(None, ge=0)
    stop_tol: float = Field(1e-8, ge=0)
    record_trace: bool = True


class OracleBlock(_Strict):
    n_paths: int = Field(ge=1)
    dt: float = Field(gt=0)
    seed: int
    gradient_fd_step: Optional[float] = Field(None, gt=0)


class EvaluationBlock(_Strict):
    probe_points: List[List[float]] = []
    n_eval: int = Field(ge=1)
    dt: float = Field(gt=0)
    seed: int
    quadrature: Literal["ou_gauss", "cloud"] = "ou_gauss"
    cloud_paths: int = Field(4000, ge=2)


class MirrorDescentBlock(_Strict):
    steps: int = Field(2, ge=1)
    gamma_md: float = Field(1.0, gt=0)


class OutputsBlock(_Strict):
    directory: str = "out"
    formats: List[Literal["json", "csv"]] = ["json", "csv"]


class SuiteBlock(_Strict):
    criteria: List[int] = list(range(1, 11))
    scale: float = Field(1.0, gt=0, le=1.0)


class ExperimentConfig(_Strict):
    problem: ProblemBlock
    data: DataBlock
    basis: BasisBlock = BasisBlock()
    solver: SolverBlock = SolverBlock()
    oracle: OracleBlock
    evaluation: EvaluationBlock
    mirror_descent: MirrorDescentBlock = MirrorDescentBlock()
    outputs: OutputsBlock = OutputsBlock()
    suite: SuiteBlock = SuiteBlock()

    @model_validator(mode="after")
    def _consistent(self):
        d = self.problem.dim
        T = self.problem.horizon
        for name, dt in (("data.dt", self.data.dt), ("oracle.dt", self.oracle.dt), ("evaluation.dt", self.evaluation.dt)):
            steps = T / dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValueError(f"{name}={dt} does not divide the horizon {T}")
        for p in self.evaluation.probe_points:
            if len(p) != 1 + d:
                raise ValueError(f"probe point {p} must have 1 + dim = {1 + d} entries")
            if not 0.0 <= p[0] <= T:
                raise ValueError(f"probe time {p[0]} outside [0, {T}]")
        init = self.problem.diffusion.init
        if init.mean is not None and len(init.mean) != d:
            raise ValueError("diffusion.init.mean length does not match problem.dim")
        rw = self.problem.reward
        for vec, name in ((rw.intermediate.slope, "reward.intermediate.slope"), (rw.terminal.c, "reward.terminal.c"),
                          (rw.terminal.slope, "reward.terminal.slope")):
            if vec is not None and len(vec) != d:
                raise ValueError(f"{name} length does not match problem.dim")
        if self.basis.monomial_degree < 0 and self.basis.rbf is None:
            raise ValueError("basis has no spatial features")
        if self.basis.rbf is not None and d != 1:
            raise ValueError("basis.rbf grids are one-dimensional; use dim = 1")
        if self.problem.rescale and rw.bound is None:
            raise ValueError("problem.rescale needs reward.bound")
        if self.problem.manufactured is not None:
            n_sp = _n_spatial(self.basis, d)
            if len(self.problem.manufactured.spatial_weights) != n_sp:
                raise ValueError(f"manufactured.spatial_weights needs {n_sp} entries (one per spatial feature)")
            if len(self.problem.manufactured.time_poly) > self.basis.time_degree + 1:
                raise ValueError("manufactured.time_poly degree exceeds basis.time_degree")
        return self


def _n_spatial(basis_block, dim):
    n = len(monomials_up_to(dim, basis_block.monomial_degree)) if basis_block.monomial_degree >= 0 else 0
    return n + (basis_block.rbf.count if basis_block.rbf else 0)


# -- loading -------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides):
    """Apply ``KEY=VALUE`` strings with dotted keys; values are parsed as JSON when possible."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part, {}), dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_value(value)
    return out


def load_config(source, overrides=None):
    """Validate a config from a path or dict; returns an :class:`ExperimentConfig`."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            with open(source, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {source} is not valid JSON: {exc}") from None
    raw = apply_overrides(raw, overrides)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def config_digest(cfg):
    return content_digest(cfg.model_dump(mode="json"))


# -- building domain objects ---------------------------------------------------


def build_diffusion(cfg):
    p = cfg.problem
    db = p.diffusion
    d = p.dim
    mean = np.full(d, db.mu) if db.init.mean is None else np.asarray(db.init.mean, dtype=float)
    if db.init.kind == "gaussian":
        init = InitLaw("gaussian", mean, db.init.var * np.eye(d))
    else:
        init = InitLaw("point", mean)
    return DiffusionSpec(d, p.horizon, OUDrift(db.theta, np.full(d, db.mu)), DiffusionMatrix.scalar(db.sigma2, d), init)


def build_basis(cfg):
    b = cfg.basis
    d = cfg.problem.dim
    spatial = monomials_up_to(d, b.monomial_degree) if b.monomial_degree >= 0 else []
    if b.rbf is not None:
        spatial = spatial + rbf_grid(b.rbf.lo, b.rbf.hi, b.rbf.count, b.rbf.width)
    return BasisSpec(b.time_degree, tuple(spatial), d, cfg.problem.horizon)


def _noise(nb):
    if nb.kind == "none":
        return NoNoise()
    if nb.kind == "uniform":
        return UniformNoise(nb.width)
    return TwoPointNoise(nb.width)


def manufactured_solution(cfg):
    """The chosen solution of a manufactured problem, or None."""
    m = cfg.problem.manufactured
    if m is None:
        return None
    return separable_model(build_basis(cfg), m.time_poly, m.spatial_weights, cfg.solver.ball_radius)


def build_problem(cfg):
    """Return ``(diffusion, reward, alpha, fstar)``; rescaling applied when requested."""
    p = cfg.problem
    diff = build_diffusion(cfg)
    rw = p.reward
    d = p.dim
    fstar = manufactured_solution(cfg)
    if fstar is not None:
        reward = manufactured_problem(fstar, diff, p.alpha, p.potential_scaling, _noise(rw.noise))
        return diff, reward, p.alpha, fstar
    ib, tb = rw.intermediate, rw.terminal
    zeros = [0.0] * d
    if ib.kind == "constant":
        inter = ConstantReward(ib.value)
    elif ib.kind == "affine":
        inter = AffineReward(ib.offset, ib.slope or zeros)
    else:
        inter = TanhReward(ib.offset, ib.scale, ib.slope or zeros)
    term = LinearTerminal(tb.c or zeros) if tb.kind == "linear" else TanhTerminal(tb.scale, tb.slope or zeros, tb.shift)
    reward = RewardSpec(inter, term, _noise(rw.noise), rw.r_max, rw.bound, rw.normalized and not p.rescale, dim=d)
    alpha = p.alpha
    if p.rescale:
        reward, alpha = rescale_problem(reward, alpha)
    return diff, reward, alpha, None


def solver_config(cfg):
    return SolverConfig(**cfg.solver.model_dump())


def oracle_config(cfg):
    o = cfg.oracle
    return OracleConfig(o.n_paths, o.dt, o.seed, o.gradient_fd_step, cfg.problem.potential_scaling)


def dump_config(cfg, path):
    _io.write_json(path, cfg.model_dump(mode="json"))
