"""Config-driven experiment steps shared by the command line and the acceptance battery.

Every step writes deterministic files (sorted keys, 17-digit floats, no
timings) so repeated runs with one config are byte-identical.
"""

import hashlib
import os

import numpy as np

from . import _io
from .config import (build_basis, build_problem, config_digest, oracle_config, solver_config)
from .dataset import generate_dataset, load_dataset, save_dataset
from .fnclass import load_model, save_model
from .forms import QuadratureRule, quadrature_energy
from .diffusion import simulate_paths
from .oracle import ClosedFormOU, FKModel, fk_gradient, fk_value
from .policy import (ComposedPolicy, PolicyHandle, classifier_guidance_fit, estimate_objective,
                     kl_path_estimate, mirror_descent_step)
from .solver import fit

DATASET_FILE = "dataset.jsonl"
MODEL_FILE = "model.json"
FIT_REPORT_FILE = "fit_report.json"
TRACE_FILE = "trace.csv"
ORACLE_FILE = "oracle.json"
EVALUATION_FILE = "evaluation.json"


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def provenance(cfg, inputs=None):
    """Digest, seeds and scaling flag embedded in every report."""
    return {
        "config_digest": config_digest(cfg),
        "inputs": {k: file_digest(v) for k, v in sorted((inputs or {}).items())},
        "seeds": {"data": cfg.data.seed, "oracle": cfg.oracle.seed, "evaluation": cfg.evaluation.seed},
        "potential_scaling": cfg.problem.potential_scaling,
    }


def reference_solution(cfg, diff, reward, alpha):
    """Known solution when one exists: the manufactured model or the scalar OU closed form."""
    _, _, _, fstar = build_problem(cfg)
    if fstar is not None:
        return fstar, "manufactured"
    try:
        return ClosedFormOU.from_problem(diff, reward, alpha), "closed_form"
    except ValueError:
        return None, None


def run_generate(cfg, out_dir):
    diff, reward, alpha, _ = build_problem(cfg)
    d = cfg.data
    ds = generate_dataset(diff, reward, d.n, d.K, d.dt, d.seed, alpha=alpha)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, DATASET_FILE)
    save_dataset(ds, path)
    return path


def run_fit(cfg, dataset_path, out_dir):
    diff, reward, alpha, _ = build_problem(cfg)
    ds = load_dataset(dataset_path, diff, reward)
    basis = build_basis(cfg)
    model, report = fit(ds, basis, diff, alpha, solver_config(cfg), scaling=cfg.problem.potential_scaling)
    os.makedirs(out_dir, exist_ok=True)
    mpath = os.path.join(out_dir, MODEL_FILE)
    save_model(model, mpath)
    rep = dict(report.to_dict(), provenance=provenance(cfg, {"dataset": dataset_path}))
    if "json" in cfg.outputs.formats:
        _io.write_json(os.path.join(out_dir, FIT_REPORT_FILE), rep)
    if "csv" in cfg.outputs.formats:
        report.write_csv(os.path.join(out_dir, TRACE_FILE))
    return mpath, report


def run_oracle(cfg, out_dir, probes=None):
    """Oracle table rows ``(t, x, f*, stderr, grad f*, grad stderr)`` at the probe points."""
    diff, reward, alpha, _ = build_problem(cfg)
    ocfg = oracle_config(cfg)
    rows = []
    for p in (cfg.evaluation.probe_points if probes is None else probes):
        t, x = float(p[0]), np.asarray(p[1:], dtype=float)
        v, se = fk_value(diff, reward, alpha, t, x, ocfg)
        g, gse = fk_gradient(diff, reward, alpha, t, x, ocfg)
        rows.append({"t": t, "x": x.tolist(), "f": v, "stderr": se, "grad": g.tolist(), "grad_stderr": gse.tolist()})
    table = {"rows": rows, "provenance": provenance(cfg)}
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, ORACLE_FILE)
    _io.write_json(path, table)
    return path, table


def _quadrature(cfg, diff):
    if cfg.evaluation.quadrature == "ou_gauss":
        return QuadratureRule.ou_gauss(diff)
    batch = simulate_paths(diff, cfg.evaluation.cloud_paths, cfg.data.dt, cfg.evaluation.seed + 1)
    return QuadratureRule.from_paths(batch, stride=max(1, int(round(0.01 / cfg.data.dt))))


def _difference(f, g):
    class _Diff:
        def value(self, t, x):
            return f.value(t, x) - g.value(t, x)

        def gradient(self, t, x):
            return f.gradient(t, x) - g.gradient(t, x)
    return _Diff()


def sobolev_error(model, ref, rule):
    """Relative population Sobolev error ``||model - ref|| / ||ref||``."""
    diff = _difference(model, ref)
    return float(np.sqrt(max(quadrature_energy(diff, diff, rule), 0.0) / quadrature_energy(ref, ref, rule)))


def policy_report(diff, reward, alpha, ph, ev):
    J, se, comps = estimate_objective(diff, reward, alpha, ph, ev.n_eval, ev.dt, ev.seed)
    kq, kl, kse = kl_path_estimate(diff, ph, ev.n_eval, ev.dt, ev.seed + 1)
    return {"J_hat": J, "stderr": se, "components": comps, "kl_quadratic": kq, "kl_logratio": kl,
            "kl_stderr": kse, "clamp_activations": comps["clamp_activations"]}


def run_evaluate(cfg, model_path, out_dir, dataset_path=None):
    """Sobolev errors against the reference solution, objective and KL estimates,
    and the classifier-guidance baseline when a dataset is supplied."""
    diff, reward, alpha, _ = build_problem(cfg)
    model = load_model(model_path)
    ev = cfg.evaluation
    ref, ref_kind = reference_solution(cfg, diff, reward, alpha)
    inputs = {"model": model_path}
    report = {"reference": ref_kind, "quadrature": ev.quadrature}
    rule = _quadrature(cfg, diff)
    if ref is not None:
        report["sobolev_error"] = sobolev_error(model, ref, rule)
    else:
        ocfg = oracle_config(cfg)
        fk = FKModel(diff, reward, alpha, ocfg)
        pts = np.asarray(ev.probe_points, dtype=float).reshape(-1, 1 + diff.dim)
        if pts.shape[0]:
            fhat = np.array([model.value(p[0], p[1:][None])[0] for p in pts])
            fref = np.array([fk.value(p[0], p[1:][None])[0] for p in pts])
            report["probe_relative_error"] = float(np.max(np.abs(fhat / fref - 1)))
    report["fitted"] = policy_report(diff, reward, alpha, PolicyHandle("value_model", model, diff, alpha), ev)
    report["zero"] = policy_report(diff, reward, alpha, PolicyHandle("zero", diffusion=diff, alpha=alpha), ev)
    if ref is not None:
        src = "closed_form" if ref_kind == "closed_form" else "oracle"
        report["oracle"] = policy_report(diff, reward, alpha, PolicyHandle(src, ref, diff, alpha), ev)
    if dataset_path is not None:
        inputs["dataset"] = dataset_path
        ds = load_dataset(dataset_path, diff, reward)
        base = classifier_guidance_fit(ds, model.basis, alpha)
        entry = {"J": policy_report(diff, reward, alpha, PolicyHandle("value_model", base, diff, alpha), ev)}
        if ref is not None:
            entry["sobolev_error"] = sobolev_error(base, ref, rule)
        report["classifier_guidance"] = entry
    # top-level fields of the evaluation report refer to the fitted policy
    fitted = report["fitted"]
    for key in ("J_hat", "stderr", "components", "kl_quadratic", "kl_logratio", "clamp_activations"):
        report[key] = fitted[key]
    report["provenance"] = provenance(cfg, inputs)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, EVALUATION_FILE)
    _io.write_json(path, report)
    return path, report


def run_mirror_descent(cfg, out_dir, steps=None):
    """Alternate fitting and reference-drift updates; one report per step."""
    diff0, reward, alpha0, _ = build_problem(cfg)
    md = cfg.mirror_descent
    steps = md.steps if steps is None else int(steps)
    basis = build_basis(cfg)
    ev = cfg.evaluation
    d = cfg.data
    diff, alpha = diff0, alpha0
    paths = []
    os.makedirs(out_dir, exist_ok=True)
    for k in range(steps):
        ds = generate_dataset(diff, reward, d.n, d.K, d.dt, d.seed + k, alpha=alpha)
        model, rep = fit(ds, basis, diff, alpha, solver_config(cfg), scaling=cfg.problem.potential_scaling)
        handle = PolicyHandle("value_model", model, diff, alpha)
        total = ComposedPolicy(diff0, diff, handle)
        J, se, comps = estimate_objective(diff0, reward, alpha0, _Wrapped(total), ev.n_eval, ev.dt, ev.seed)
        out = {"step": k, "alpha": alpha, "iterations_run": rep.iterations_run, "J_hat": J, "stderr": se,
               "components": comps, "provenance": provenance(cfg)}
        path = os.path.join(out_dir, f"md_step_{k}.json")
        _io.write_json(path, out)
        paths.append(path)
        diff, alpha = mirror_descent_step(diff0, reward, alpha0, md.gamma_md, total)
    return paths


class _Wrapped:
    """Adapts a plain control callable to the PolicyHandle evaluation interface."""

    def __init__(self, fn):
        self.fn = fn
        self.clamp_activations = self.cap_activations = 0

    def reset_counts(self):
        inner = getattr(self.fn, "handle", None)
        if inner is not None:
            inner.reset_counts()

    def evaluate(self, diff, t, x):
        out = self.fn(t, x)
        inner = getattr(self.fn, "handle", None)
        if inner is not None:
            self.clamp_activations = inner.clamp_activations
            self.cap_activations = inner.cap_activations
        return out

