"""Off-policy observation data: snapshots of reference trajectories with rewards.

Every trajectory contributes its initial state, K snapshots at i.i.d.
uniform times (snapped to the simulation grid) with noisy running rewards,
its terminal state and the exact terminal reward. Files are JSON lines: one
header object followed by one record per trajectory.
"""

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import _io
from ._validation import check_count
from .diffusion import BlowUpError, DEFAULT_BLOWUP, propagate, time_grid
from .rewards import sample_intermediate

SCHEMA_VERSION = 1
_TIMES_STREAM = 0x7F000001
_REWARD_STREAM = 0x7F000002


class DatasetFormatError(ValueError):
    pass


def aux_rng(seed, stream):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(stream,))))


@dataclass
class ObservationRecord:
    x0: np.ndarray
    obs: list  # [(t_k, x_k, R_k)]
    xT: np.ndarray
    Y: float


@dataclass
class ObservationDataset:
    """Array-backed dataset of n trajectories with K snapshots each.

    Attributes
    ----------
    x0, xT : (n, d) arrays
    t_obs : (n, K) snapped observation times, sorted within each record
    x_obs : (n, K, d) states at the observation times
    R : (n, K) observed running rewards
    Y : (n,) exact terminal rewards
    """

    x0: np.ndarray
    t_obs: np.ndarray
    x_obs: np.ndarray
    R: np.ndarray
    xT: np.ndarray
    Y: np.ndarray
    T: float
    alpha: float = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.x0.shape[0]

    @property
    def K(self):
        return self.t_obs.shape[1]

    @property
    def dim(self):
        return self.x0.shape[1]

    @property
    def records(self) -> List[ObservationRecord]:
        return [
            ObservationRecord(self.x0[i], [(float(self.t_obs[i, k]), self.x_obs[i, k], float(self.R[i, k]))
                                           for k in range(self.K)], self.xT[i], float(self.Y[i]))
            for i in range(self.n)
        ]

    def subset(self, n):
        """The first ``n`` records (same K, T and meta)."""
        return ObservationDataset(self.x0[:n], self.t_obs[:n], self.x_obs[:n], self.R[:n], self.xT[:n],
                                  self.Y[:n], self.T, self.alpha, dict(self.meta, n=n))

    def equals(self, other):
        arrays = ("x0", "t_obs", "x_obs", "R", "xT", "Y")
        return (self.T == other.T and self.alpha == other.alpha and self.meta == other.meta
                and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays))


class _SnapshotVisitor:
    def __init__(self, steps, n_steps, dim):
        m, K = steps.shape
        self.K = K
        self.flat_order = np.argsort(steps.ravel(), kind="stable")
        self.sorted_steps = steps.ravel()[self.flat_order]
        self.snaps = np.empty((m * K, dim))
        self.dim = dim
        self.x0 = None
        self.xT = None
        self.last = n_steps

    def visit(self, step, t, x, action, dB):
        if step == 0:
            self.x0 = x.copy()
        if step == self.last:
            self.xT = x.copy()
        lo, hi = np.searchsorted(self.sorted_steps, [step, step + 1])
        if hi > lo:
            sel = self.flat_order[lo:hi]
            self.snaps[sel] = x[sel // self.K]

    def result(self):
        return self.x0, self.snaps.reshape(self.x0.shape[0], self.K, self.dim), self.xT


def generate_dataset(diff, reward, n, K, dt, seed, alpha=None, blowup=DEFAULT_BLOWUP, threads=None):
    """Simulate ``n`` reference trajectories and record their observations."""
    n = check_count(n, "n", minimum=1)
    K = check_count(K, "K")
    if not (reward.normalized or reward.manufactured):
        raise ValueError("dataset generation needs a normalized reward (or a manufactured one)")
    grid = time_grid(0.0, diff.horizon, dt)
    n_steps = len(grid) - 1
    u = aux_rng(seed, _TIMES_STREAM).uniform(0.0, diff.horizon, size=(n, K))
    steps = np.sort(np.clip(np.rint(u / dt), 0, n_steps).astype(int), axis=1)

    def make(rows):
        return _SnapshotVisitor(steps[rows], n_steps, diff.dim)

    results, failed = propagate(diff, n, dt, seed, make, blowup=blowup, threads=threads)
    if failed.size:
        raise BlowUpError(failed, blowup)
    x0 = np.concatenate([r[0] for r in results])
    x_obs = np.concatenate([r[1] for r in results])
    xT = np.concatenate([r[2] for r in results])
    t_obs = grid[steps]
    if K:
        R = sample_intermediate(reward, t_obs.ravel(), x_obs.reshape(n * K, diff.dim),
                                aux_rng(seed, _REWARD_STREAM)).reshape(n, K)
    else:
        R = np.zeros((n, 0))
    Y = np.asarray(reward.terminal(xT), dtype=float)
    meta = {"n": n, "K": K, "dt": float(dt), "seed": int(seed), "diffusion_digest": diff.digest(),
            "reward_digest": reward.digest()}
    return ObservationDataset(x0, t_obs, x_obs.reshape(n, K, diff.dim), R, xT, Y, float(diff.horizon),
                              None if alpha is None else float(alpha), meta)


def save_dataset(ds, path):
    header = {"schema_version": SCHEMA_VERSION, "n": ds.n, "K": ds.K, "T": ds.T, "dt": ds.meta.get("dt"),
              "alpha": ds.alpha, "seed": ds.meta.get("seed"), "diffusion_digest": ds.meta.get("diffusion_digest"),
              "reward_digest": ds.meta.get("reward_digest")}
    f = _io.fmt_float
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_io.dumps(header) + "\n")
        for i in range(ds.n):
            obs = ",".join("[" + ",".join([f(ds.t_obs[i, k])] + [f(v) for v in ds.x_obs[i, k]] + [f(ds.R[i, k])]) + "]"
                           for k in range(ds.K))
            fh.write('{"x0":[' + ",".join(f(v) for v in ds.x0[i]) + '],"obs":[' + obs + '],"xT":['
                     + ",".join(f(v) for v in ds.xT[i]) + '],"Y":' + f(ds.Y[i]) + "}\n")


def load_dataset(path, diffusion=None, reward=None):
    """Read a dataset file, refusing schema or (when specs are given) digest mismatches."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: header is not valid JSON ({exc})") from None
    if header.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(f"{path}: schema_version {header.get('schema_version')!r}, expected {SCHEMA_VERSION}")
    for spec, key in ((diffusion, "diffusion_digest"), (reward, "reward_digest")):
        if spec is not None and spec.digest() != header.get(key):
            raise DatasetFormatError(f"{path}: {key} does not match the supplied specification")
    n, K = int(header["n"]), int(header["K"])
    if len(lines) - 1 != n:
        raise DatasetFormatError(f"{path}: header declares {n} records, found {len(lines) - 1} "
                                 f"(truncated at record index {len(lines) - 1})")
    x0, t_obs, x_obs, R, xT, Y = [], [], [], [], [], []
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
            width = len(rec["x0"]) + 2
            obs = np.asarray(rec["obs"], dtype=float).reshape(K, width)
            if K and obs.shape[1] < 3:
                raise ValueError("observation rows need [t, x..., R]")
            x0.append(rec["x0"])
            xT.append(rec["xT"])
            Y.append(float(rec["Y"]))
            t_obs.append(obs[:, 0])
            x_obs.append(obs[:, 1:-1])
            R.append(obs[:, -1])
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise DatasetFormatError(f"{path}: cannot parse record index {i}: {exc}") from None
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[1]
    meta = {"n": n, "K": K, "dt": header.get("dt"), "seed": header.get("seed"),
            "diffusion_digest": header.get("diffusion_digest"), "reward_digest": header.get("reward_digest")}
    return ObservationDataset(x0, np.asarray(t_obs).reshape(n, K), np.asarray(x_obs).reshape(n, K, d),
                              np.asarray(R).reshape(n, K), np.asarray(xT, dtype=float), np.asarray(Y),
                              float(header["T"]), header.get("alpha"), meta)
