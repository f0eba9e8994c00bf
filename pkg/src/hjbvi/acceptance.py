"""The acceptance battery: ten numbered checks run by ``hjbvi suite`` and the tests.

Criteria 1, 2, 5 and 6 use the configured OU instance; the manufactured,
rescaling and bandwidth checks build their own fixed instances from the
configured diffusion.
"""

import filecmp
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .config import build_basis, build_diffusion, build_problem, solver_config
from .dataset import generate_dataset
from .diffusion import simulate_paths
from .fnclass import BasisSpec, features, monomial, rbf_grid, separable_model
from .forms import QuadratureRule, assemble, population_context
from .oracle import ClosedFormOU, FKModel, OracleConfig, fk_value, manufactured_problem
from .policy import PolicyHandle, estimate_objective, kl_path_estimate
from .rewards import RewardSpec, TanhReward, TanhTerminal, TwoPointNoise, rescale_problem
from .solver import SolverConfig, coercivity_constant, fit, fit_population, iterate, random_feasible, vi_residual

# manufactured instance: a(t) (w_0 + sum_j w_j rbf_j(x)), a' / a in [1.3, 1.5] so r <= -1
MANUFACTURED_TIME_POLY = (1.0, 1.5, 1.125, 0.5625)
MANUFACTURED_WEIGHTS = (1.0, 0.1, -0.08, 0.12, 0.05, -0.1, 0.15, -0.05, 0.1)
MANUFACTURED_NOISE = 0.5
RECOVERY_REPLICATES = 4
TIGHT_SOLVER = dict(max_iters=50_000, ball_radius=1e3, stop_tol=1e-10)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    threshold: str
    notes: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{status}] criterion {self.number} ({self.name}): {shown}; required {self.threshold}"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": bool(self.passed),
                "measured": self.measured, "threshold": self.threshold, "notes": self.notes}


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(u) for u in v) + "]"
    return str(v)


@dataclass
class Battery:
    """Lazily shared objects between criteria."""

    cfg: object
    scale: float = 1.0
    cache: dict = field(default_factory=dict)

    def n(self, base, minimum=2):
        return max(minimum, int(round(base * self.scale)))

    @property
    def ou(self):
        if "ou" not in self.cache:
            diff, reward, alpha, _ = build_problem(self.cfg)
            self.cache["ou"] = (diff, reward, alpha, ClosedFormOU.from_problem(diff, reward, alpha))
        return self.cache["ou"]

    @property
    def manufactured(self):
        if "man" not in self.cache:
            diff = build_diffusion(self.cfg)
            basis = BasisSpec(3, tuple([monomial([0])] + rbf_grid(-2.5, 2.5, 8, 0.9)), 1, diff.horizon)
            fstar = separable_model(basis, MANUFACTURED_TIME_POLY, MANUFACTURED_WEIGHTS, TIGHT_SOLVER["ball_radius"])
            reward = manufactured_problem(fstar, diff, 1.0, noise=TwoPointNoise(MANUFACTURED_NOISE))
            rule = QuadratureRule.ou_gauss(diff)
            self.cache["man"] = (diff, reward, basis, fstar, rule)
        return self.cache["man"]

    @property
    def fitted_ou(self):
        if "fit" not in self.cache:
            diff, reward, alpha, _ = self.ou
            d = self.cfg.data
            ds = generate_dataset(diff, reward, self.n(d.n, 50), d.K, d.dt, d.seed, alpha=alpha)
            model, report = fit(ds, build_basis(self.cfg), diff, alpha, solver_config(self.cfg))
            self.cache["fit"] = (model, report)
        return self.cache["fit"]


def criterion_1(b):
    diff, reward, alpha, cf = b.ou
    o = b.cfg.oracle
    ocfg = OracleConfig(b.n(o.n_paths), o.dt, o.seed, None, "alpha_r")
    start = time.perf_counter()
    rel = []
    for p in b.cfg.evaluation.probe_points:
        est, _ = fk_value(diff, reward, alpha, p[0], p[1:], ocfg)
        rel.append(abs(est / cf.value(p[0], [p[1:]])[0] - 1))
    runtime_ok = time.perf_counter() - start <= 60.0
    worst = float(max(rel))
    return CriterionResult(1, "oracle agreement", worst <= 0.02 and runtime_ok,
                           {"max_rel_error": worst, "probes": len(rel), "runtime_ok": runtime_ok},
                           "max |FK/exact - 1| <= 0.02 within 60 s")


def criterion_2(b):
    diff, reward, alpha, _ = b.ou
    basis = build_basis(b.cfg)
    rule = QuadratureRule.ou_gauss(diff)
    ctx = population_context(basis, diff, reward, alpha, rule)
    thetas = np.random.default_rng(b.cfg.evaluation.seed).standard_normal((100, basis.n_features))
    quad_b = np.einsum("ip,pq,iq->i", thetas, ctx.M, thetas)
    quad_e = np.einsum("ip,pq,iq->i", thetas, ctx.gram_E, thetas)
    ratio = quad_b / quad_e
    need = 0.45 * coercivity_constant(alpha, diff.lambda_min)
    violations = int(np.sum(ratio < need))
    return CriterionResult(2, "bilinear positivity", violations == 0,
                           {"min_ratio": float(ratio.min()), "violations": violations},
                           f"B(f,f) / E(f,f) >= {need:g} for all 100 models")


def _relative_error(theta, fstar, G):
    e = theta - fstar.theta
    return float(np.sqrt(e @ G @ e / (fstar.theta @ G @ fstar.theta)))


def criterion_3(b):
    diff, reward, basis, fstar, rule = b.manufactured
    G = population_context(basis, diff, reward, 1.0, rule).gram_E
    cfg = SolverConfig(**TIGHT_SOLVER)
    n_small, n_large = b.n(2000, 50), b.n(8000, 200)
    errs = {n_small: [], n_large: []}
    for r in range(RECOVERY_REPLICATES):
        ds = generate_dataset(diff, reward, n_large, 20, 1e-3, b.cfg.data.seed + 1000 + r)
        for n in (n_small, n_large):
            ctx = assemble(ds.subset(n), basis, diff, 1.0)
            model, _ = iterate(ctx, cfg)
            errs[n].append(_relative_error(model.theta, fstar, G))
            if r == 0 and n == n_small:
                b.cache["vi"] = (ctx, model)
    rms = {n: float(np.sqrt(np.mean(np.square(v)))) for n, v in errs.items()}
    ratio = rms[n_small] / rms[n_large]
    worst = float(max(errs[n_small]))
    return CriterionResult(3, "well-specified recovery", worst <= 0.10 and 1.4 <= ratio <= 3.0,
                           {"max_rel_error_n2000": worst, "rms_n2000": rms[n_small], "rms_n8000": rms[n_large],
                            "ratio": ratio},
                           "error <= 0.10 at n=2000 and RMS ratio n=2000/n=8000 in [1.4, 3.0]",
                           f"{RECOVERY_REPLICATES} replicate datasets, population Sobolev norm")


def criterion_4(b):
    diff, reward, basis, fstar, rule = b.manufactured
    cfg = SolverConfig(max_iters=300, ball_radius=TIGHT_SOLVER["ball_radius"])
    _, trace, report = fit_population(diff, reward, 1.0, basis, cfg, rule, fstar)
    bound = 1 - report.gamma * coercivity_constant(1.0, diff.lambda_min) / 4 + 0.05
    floor = 1e-10 * np.sqrt(trace.fixed_point @ population_context(basis, diff, reward, 1.0, rule).gram_E
                            @ trace.fixed_point)
    usable = trace.distances[2:-1] > floor
    ratios = trace.ratios[2:][usable]
    worst = float(ratios.max()) if ratios.size else 0.0
    return CriterionResult(4, "population contraction", bool(ratios.size) and worst <= bound,
                           {"max_ratio": worst, "gamma": report.gamma, "iterations": int(ratios.size)},
                           f"distance ratio <= {bound:.6f} after the second iteration")


def _j(b, ph):
    diff, reward, alpha, _ = b.ou
    ev = b.cfg.evaluation
    return estimate_objective(diff, reward, alpha, ph, b.n(ev.n_eval), ev.dt, ev.seed)


def criterion_5(b):
    diff, reward, alpha, cf = b.ou
    model, _ = b.fitted_ou
    j_hat, se_hat, _ = _j(b, PolicyHandle("value_model", model, diff, alpha))
    j_zero, _, _ = _j(b, PolicyHandle("zero", diffusion=diff, alpha=alpha))
    j_star, _, _ = _j(b, PolicyHandle("closed_form", cf, diff, alpha))
    improve = j_hat >= j_zero + 0.5 * (j_star - j_zero)
    close = abs(j_hat - j_star) <= 0.05 * abs(j_star) + 2 * se_hat
    return CriterionResult(5, "policy quality", improve and close,
                           {"J_fitted": j_hat, "J_zero": j_zero, "J_star": j_star, "stderr": se_hat},
                           "J_fit >= J_0 + (J* - J_0)/2 and |J_fit - J*| <= 0.05|J*| + 2 se")


def criterion_6(b):
    diff, reward, alpha, cf = b.ou
    model, _ = b.fitted_ou
    ev = b.cfg.evaluation
    gaps = {}
    ok = True
    for name, ph in (("zero", PolicyHandle("zero", diffusion=diff, alpha=alpha)),
                     ("oracle", PolicyHandle("closed_form", cf, diff, alpha)),
                     ("fitted", PolicyHandle("value_model", model, diff, alpha))):
        kq, kl, se = kl_path_estimate(diff, ph, b.n(ev.n_eval), ev.dt, ev.seed + 1)
        gap = abs(kq - kl)
        ok &= gap <= 4 * se["combined"]
        gaps[name] = gap / se["combined"] if se["combined"] > 0 else (0.0 if gap == 0 else float("inf"))
    return CriterionResult(6, "Girsanov identity", bool(ok), {f"gap_over_se_{k}": v for k, v in gaps.items()},
                           "|KL_quad - KL_logratio| <= 4 combined stderr for each policy")


RESCALE_PROBES = [(t, x) for t in (0.0, 0.25, 0.5, 0.75, 0.9) for x in (-1.0, 1.0)]


def criterion_7(b):
    diff = build_diffusion(b.cfg)
    raw = RewardSpec(TanhReward(-0.5, 0.5, [1.0]), TanhTerminal(1.0, [1.0]), bound=1.0, dim=1)
    alpha = 1.0
    scaled, alpha_s = rescale_problem(raw, alpha)
    n_paths = b.n(40_000, 500)
    raw_fk = FKModel(diff, raw, alpha, OracleConfig(n_paths, 1e-2, b.cfg.oracle.seed + 7, None, "r_over_alpha"))
    sc_fk = FKModel(diff, scaled, alpha_s, OracleConfig(n_paths, 1e-2, b.cfg.oracle.seed + 8, None, "r_over_alpha"))
    p_raw = PolicyHandle("oracle", raw_fk, diff, alpha)
    p_sc = PolicyHandle("oracle", sc_fk, diff, alpha_s, f_floor=1e-300)
    gaps = [abs(p_raw.evaluate(diff, t, np.array([[x]]))[0, 0] - p_sc.evaluate(diff, t, np.array([[x]]))[0, 0])
            for t, x in RESCALE_PROBES]
    worst = float(max(gaps))
    return CriterionResult(7, "rescaling invariance", worst <= 0.05, {"max_abs_gap": worst, "probes": len(gaps)},
                           "|pi_raw - pi_rescaled| <= 0.05 at 10 probes", "potential scaling r_over_alpha")


def criterion_8(b, m=4):
    diff = build_diffusion(b.cfg)
    spatial = build_basis(b.cfg).spatial
    basis = BasisSpec(m, spatial, diff.dim, diff.horizon)
    batch = simulate_paths(diff, b.n(2000, 100), 1e-2, b.cfg.data.seed + 3)
    rule = QuadratureRule.from_paths(batch)
    fb = features(basis, rule.t, rule.x, hessian=False)
    thetas = np.random.default_rng(b.cfg.evaluation.seed + 3).standard_normal((200, basis.n_features))
    num = np.sqrt(rule.w @ (fb.dphi_dt @ thetas.T) ** 2)
    den = np.sqrt(rule.w @ (fb.phi @ thetas.T) ** 2)
    ratio = num / den
    bound = 1.2 * m ** 1.5
    worst = float(ratio.max())
    return CriterionResult(8, "bandwidth diagnostic", worst <= bound,
                           {"max_ratio": worst, "median_ratio": float(np.median(ratio))},
                           f"max ||d/dt f|| / ||f|| <= {bound:g}")


def criterion_9(b):
    if "vi" not in b.cache:
        diff, reward, basis, fstar, rule = b.manufactured
        ds = generate_dataset(diff, reward, b.n(2000, 50), 20, 1e-3, b.cfg.data.seed + 1000)
        ctx = assemble(ds, basis, diff, 1.0)
        b.cache["vi"] = (ctx, iterate(ctx, SolverConfig(**TIGHT_SOLVER))[0])
    ctx, model = b.cache["vi"]
    g = random_feasible(model.basis.n_features, model.ball_radius, 100, b.cfg.evaluation.seed + 9)
    worst = float(np.max(vi_residual(ctx, model.theta, g)))
    return CriterionResult(9, "VI residual", worst <= 1e-4, {"max_normalized_residual": worst},
                           "max B_n(f, g - f) / scale <= 1e-4 over 100 feasible g")


def criterion_10(b):
    from .pipeline import run_evaluate, run_fit, run_generate
    quick = b.cfg.model_copy(deep=True)
    quick.evaluation.n_eval = min(quick.evaluation.n_eval, 2000)
    files = ("dataset.jsonl", "model.json", "fit_report.json", "trace.csv", "evaluation.json")
    with tempfile.TemporaryDirectory() as tmp:
        dirs = [os.path.join(tmp, "a"), os.path.join(tmp, "b")]
        for d in dirs:
            ds = run_generate(quick, d)
            model, _ = run_fit(quick, ds, d)
            run_evaluate(quick, model, d, ds)
        same = [filecmp.cmp(os.path.join(dirs[0], f), os.path.join(dirs[1], f), shallow=False) for f in files]
    return CriterionResult(10, "determinism", all(same), {"identical_files": sum(same), "files": len(files)},
                           "repeated runs give byte-identical files")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def run_battery(cfg, criteria=None, scale=None, echo=None):
    """Run the selected criteria in order; returns a list of CriterionResult."""
    b = Battery(cfg, cfg.suite.scale if scale is None else scale)
    out = []
    for k in (cfg.suite.criteria if criteria is None else criteria):
        res = CRITERIA[k](b)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out


def bundled_config_path():
    return os.path.join(os.path.dirname(__file__), "data", "ou_suite.json")


def write_suite_report(results, path, provenance):
    _io.write_json(path, {"criteria": [r.to_dict() for r in results],
                          "all_passed": all(r.passed for r in results), "provenance": provenance})
