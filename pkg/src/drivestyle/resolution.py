"""Driver resolution: trajectory latents, affinity propagation, AMI and estimation error."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import EncodingConfig, encode_trajectory
from .model import DCRNN
from .trajectory import Trajectory


def latent_trajectory(model: DCRNN, trajectory: Trajectory | np.ndarray, cfg: EncodingConfig | None = None) -> np.ndarray:
    """Mean FC1 output over a trajectory's segments (inference mode)."""
    maps = encode_trajectory(trajectory, cfg) if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    if len(maps) == 0:
        raise ValueError("trajectory yields no segments")
    _, latents = model.infer(maps)
    return latents.mean(axis=0)


@dataclass
class APResult:
    labels: np.ndarray
    exemplars: np.ndarray
    converged: bool
    iterations: int

    @property
    def n_clusters(self) -> int:
        return len(self.exemplars)


def similarity_matrix(points: np.ndarray) -> np.ndarray:
    """Negative squared Euclidean distances."""
    x = np.asarray(points, dtype=np.float64)
    d = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    return -d


def _assign(s: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    labels = np.argmax(s[:, exemplars], axis=1)
    labels[exemplars] = np.arange(len(exemplars))
    return labels


def affinity_propagation(
    points,
    damping: float = 0.5,
    preference: float | None = None,
    max_iter: int = 200,
    convergence_window: int = 15,
) -> APResult:
    """Responsibility/availability message passing; no jitter, ties to the lowest index.

    ``preference`` defaults to the median off-diagonal similarity.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise ValueError("affinity propagation needs at least 2 points")
    if not 0.5 <= damping < 1:
        raise ValueError("damping must lie in [0.5, 1)")
    if not np.all(np.isfinite(x)):
        raise ValueError("points must be finite")
    n = len(x)
    s = similarity_matrix(x)
    off = s[~np.eye(n, dtype=bool)]
    if preference is None:
        preference = float(np.median(off))

    # All off-diagonal similarities equal: messages cannot separate points.
    if np.all(off == off[0]):
        if preference > off[0]:
            return APResult(np.arange(n), np.arange(n), True, 0)
        return APResult(np.zeros(n, dtype=int), np.array([0]), True, 0)

    np.fill_diagonal(s, preference)
    r = np.zeros((n, n))
    a = np.zeros((n, n))
    rows = np.arange(n)
    history = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        as_ = a + s
        best = np.argmax(as_, axis=1)
        first = as_[rows, best]
        as_[rows, best] = -np.inf
        second = np.max(as_, axis=1)
        r_new = s - first[:, None]
        r_new[rows, best] = s[rows, best] - second
        r = damping * r + (1 - damping) * r_new

        rp = np.maximum(r, 0)
        np.fill_diagonal(rp, np.diag(r))
        col = rp.sum(axis=0)
        a_new = col[None, :] - rp
        diag = np.diag(a_new).copy()
        a_new = np.minimum(a_new, 0)
        np.fill_diagonal(a_new, diag)
        a = damping * a + (1 - damping) * a_new

        ex = (np.diag(a) + np.diag(r)) > 0
        history.append(ex)
        if len(history) >= convergence_window:
            window = history[-convergence_window:]
            if ex.any() and all(np.array_equal(ex, h) for h in window):
                converged = True
                break

    exemplars = np.flatnonzero(np.diag(a) + np.diag(r) > 0)
    if len(exemplars) == 0:
        # best effort: the single strongest self-evidence
        exemplars = np.array([int(np.argmax(np.diag(a) + np.diag(r)))])
        converged = False
    return APResult(_assign(s, exemplars), exemplars, converged, it)


def _contingency(u, v) -> np.ndarray:
    u, v = np.asarray(u), np.asarray(v)
    _, ui = np.unique(u, return_inverse=True)
    _, vi = np.unique(v, return_inverse=True)
    table = np.zeros((ui.max() + 1, vi.max() + 1), dtype=np.int64)
    np.add.at(table, (ui, vi), 1)
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def mutual_information(table: np.ndarray) -> float:
    n = table.sum()
    a = table.sum(axis=1, keepdims=True)
    b = table.sum(axis=0, keepdims=True)
    nz = table > 0
    return float(np.sum((table[nz] / n) * np.log(n * table[nz] / (a * b)[nz])))


def expected_mutual_information(a: np.ndarray, b: np.ndarray, n: int) -> float:
    """E[MI] under the hypergeometric model with fixed marginals ``a`` and ``b``."""
    logfact = np.concatenate([[0.0], np.cumsum(np.log(np.arange(1, n + 1)))])
    total = 0.0
    for ai in a:
        for bj in b:
            lo, hi = max(1, ai + bj - n), min(ai, bj)
            if lo > hi:
                continue
            nij = np.arange(lo, hi + 1)
            logp = (
                logfact[ai] + logfact[bj] + logfact[n - ai] + logfact[n - bj]
                - logfact[n] - logfact[nij] - logfact[ai - nij] - logfact[bj - nij] - logfact[n - ai - bj + nij]
            )
            total += float(np.sum(nij / n * np.log(n * nij / (ai * bj)) * np.exp(logp)))
    return total


def _same_partition(table: np.ndarray) -> bool:
    nz = table > 0
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


def ami(pred, truth) -> float:
    """Adjusted mutual information with arithmetic-mean normalization."""
    pred, truth = list(pred), list(truth)
    if len(pred) != len(truth):
        raise ValueError(f"label lengths differ: {len(pred)} vs {len(truth)}")
    if not pred:
        raise ValueError("labels must be non-empty")
    table = _contingency(pred, truth)
    n = int(table.sum())
    a, b = table.sum(axis=1), table.sum(axis=0)
    mi = mutual_information(table)
    emi = expected_mutual_information(a, b, n)
    h_mean = 0.5 * (_entropy(a, n) + _entropy(b, n))
    denom = h_mean - emi
    if abs(denom) <= 1e-12 * max(1.0, h_mean):
        return 1.0 if _same_partition(table) else 0.0
    return float((mi - emi) / denom)


def estimation_error(num_clusters: int, num_true_drivers: int) -> int:
    return abs(int(num_clusters) - int(num_true_drivers))


@dataclass
class ResolutionReport:
    average_ami: float
    std_ami: float
    average_ee: float
    std_ee: float
    subsets: int
    per_subset: list = field(default_factory=list)

    def to_json(self, method: str = "D-CRNN") -> str:
        payload = {
            "method": method,
            "Average-AMI": self.average_ami,
            "Std-AMI": self.std_ami,
            "Average-EE": self.average_ee,
            "Std-EE": self.std_ee,
            **asdict(self),
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _run_subset(args) -> dict:
    seed, by_driver, drivers_per_subset, damping, preference, max_iter, window = args
    rng = np.random.default_rng(seed)
    names = sorted(by_driver)
    chosen = [names[i] for i in sorted(rng.choice(len(names), size=drivers_per_subset, replace=False))]
    points, truth = [], []
    for d in chosen:
        for vec in by_driver[d]:
            points.append(vec)
            truth.append(d)
    res = affinity_propagation(np.array(points), damping, preference, max_iter, window)
    return {
        "drivers": chosen,
        "ami": ami(res.labels, truth),
        "ee": estimation_error(res.n_clusters, len(chosen)),
        "clusters": res.n_clusters,
        "converged": res.converged,
    }


def resolution_experiment(
    latents: Mapping[str, np.ndarray],
    labels: Mapping[str, str],
    subsets: int,
    drivers_per_subset: int = 10,
    seed: int = 0,
    damping: float = 0.5,
    preference: float | None = None,
    max_iter: int = 200,
    convergence_window: int = 15,
    workers: int = 1,
) -> ResolutionReport:
    """Cluster random driver subsets of the given trajectory latents.

    ``latents`` maps trajectory id to its vector (typically test trajectories);
    ``labels`` maps trajectory id to driver id.
    """
    by_driver: dict = {}
    for tid in sorted(latents):
        by_driver.setdefault(labels[tid], []).append(np.asarray(latents[tid], dtype=np.float64))
    if len(by_driver) < drivers_per_subset:
        raise ValueError(f"{len(by_driver)} drivers available, {drivers_per_subset} requested per subset")
    if subsets < 1:
        raise ValueError("subsets must be positive")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(subsets)]
    jobs = [(s, by_driver, drivers_per_subset, damping, preference, max_iter, convergence_window) for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_run_subset, jobs))
    else:
        rows = [_run_subset(j) for j in jobs]
    amis = np.array([r["ami"] for r in rows])
    ees = np.array([r["ee"] for r in rows], dtype=float)
    return ResolutionReport(float(amis.mean()), float(amis.std()), float(ees.mean()), float(ees.std()), subsets, rows)


def embed_trajectories(model: DCRNN, trajectories: Sequence[Trajectory], cfg: EncodingConfig) -> dict:
    """trajectory id -> latent; trajectories with no segment are skipped."""
    out = {}
    for t in trajectories:
        maps = encode_trajectory(t, cfg)
        if len(maps):
            out[t.trajectory_id] = latent_trajectory(model, maps)
    return out


def latents_csv(latents: Mapping[str, np.ndarray], labels: Mapping[str, str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = len(next(iter(latents.values()))) if latents else 0
    w.writerow(["trajectory_id", "driver_id"] + [f"z{i}" for i in range(dim)])
    for tid in sorted(latents):
        w.writerow([tid, labels[tid]] + [repr(float(v)) for v in latents[tid]])
    return buf.getvalue()
