"""Similarity-aware dataset curation: threshold, stratified and random sampling."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .similarity import MatchThreshold, SimilarityMatrix, pairwise_similarity, summarize
from .trajectory import Trajectory

STRATEGIES = ("threshold", "stratified", "random")


class SamplingError(ValueError):
    """Not enough eligible drivers or trajectories for the request."""


@dataclass(frozen=True)
class SamplingParams:
    nu: float = 0.2
    thresholds: tuple = (0.2, 0.25, 0.3)
    n_trajectories: int = 50
    n_drivers: int = 50
    seed: int = 0
    train_fraction: float = 0.85

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(v) for v in self.thresholds))
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])) or not self.thresholds:
            raise ValueError("thresholds must be non-empty and strictly increasing")
        if self.thresholds[0] <= 0:
            raise ValueError("thresholds must be positive")
        if self.n_trajectories < 1 or self.n_drivers < 1:
            raise ValueError("n_trajectories and n_drivers must be positive")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass
class DatasetManifest:
    name: str
    strategy: str
    params: dict
    seed: int
    entries: list = field(default_factory=list)  # dicts: driver_id, trajectory_id, split
    stats: dict = field(default_factory=dict)

    def drivers(self) -> list:
        seen: dict = {}
        for e in self.entries:
            seen.setdefault(e["driver_id"], None)
        return list(seen)

    def trajectories(self, driver_id=None, split=None) -> list:
        return [
            e["trajectory_id"]
            for e in self.entries
            if (driver_id is None or e["driver_id"] == driver_id) and (split is None or e["split"] == split)
        ]

    def driver_of(self) -> dict:
        return {e["trajectory_id"]: e["driver_id"] for e in self.entries}

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "strategy": self.strategy,
            "params": self.params,
            "seed": self.seed,
            "stats": self.stats,
            "entries": self.entries,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(d["name"], d["strategy"], d["params"], d["seed"], d["entries"], d.get("stats", {}))


def driver_similarities(
    dataset: Mapping[str, Sequence[Trajectory]],
    thr: MatchThreshold = MatchThreshold(),
    workers: int = 1,
) -> dict[str, SimilarityMatrix]:
    return {d: pairwise_similarity(list(trajs), thr, workers) for d, trajs in dataset.items() if len(trajs) >= 2}


def _matrices(dataset, matrices, thr=MatchThreshold()):
    out = dict(matrices or {})
    for d, trajs in dataset.items():
        if d not in out and len(trajs) >= 2:
            out[d] = pairwise_similarity(list(trajs), thr)
    return out


def _ids(trajs) -> list:
    return [t.trajectory_id if isinstance(t, Trajectory) else t for t in trajs]


def greedy_compatible_subset(sim: SimilarityMatrix, nu: float, rng: np.random.Generator) -> list:
    """Visit trajectories in a seeded random order; keep one when its score
    against every already kept trajectory is below ``nu``."""
    order = rng.permutation(len(sim.trajectory_ids))
    kept: list[int] = []
    for i in order:
        if all(sim.scores[i, k] < nu for k in kept):
            kept.append(int(i))
    return [sim.trajectory_ids[i] for i in kept]


def assign_splits(selection: Mapping[str, Sequence], train_fraction: float, seed: int) -> list[dict]:
    """Per-driver split; ceil(train_fraction * n) trajectories go to train."""
    rng = np.random.default_rng(seed)
    entries = []
    for driver in selection:
        tids = list(selection[driver])
        if len(tids) < 2:
            raise SamplingError(f"driver {driver!r} has fewer than 2 trajectories to split")
        n_train = min(len(tids) - 1, math.ceil(round(train_fraction * len(tids), 9)))
        perm = rng.permutation(len(tids))
        train = set(perm[:n_train].tolist())
        for i, tid in enumerate(tids):
            entries.append({"driver_id": driver, "trajectory_id": tid, "split": "train" if i in train else "test"})
    return entries


def _pick_drivers(eligible: list, n: int, rng: np.random.Generator, what: str) -> list:
    if len(eligible) < n:
        raise SamplingError(f"only {len(eligible)} eligible drivers for {what}, need {n}")
    idx = rng.choice(len(eligible), size=n, replace=False)
    return [eligible[i] for i in sorted(idx)]


def _finish(name, strategy, params: SamplingParams, selection, matrices) -> DatasetManifest:
    entries = assign_splits(selection, params.train_fraction, params.seed)
    manifest = DatasetManifest(name, strategy, asdict(params), params.seed, entries)
    manifest.params["thresholds"] = list(params.thresholds)
    if matrices is not None:
        manifest.stats = manifest_stats(manifest, matrices)
    return manifest


def threshold_sample(
    dataset: Mapping[str, Sequence[Trajectory]],
    params: SamplingParams,
    matrices: Mapping[str, SimilarityMatrix] | None = None,
) -> DatasetManifest:
    """Per driver, a greedy subset with all pairwise scores below nu; then a
    seeded draw of n_drivers among drivers keeping at least n_trajectories."""
    matrices = _matrices(dataset, matrices)
    rng = np.random.default_rng(params.seed)
    kept = {}
    for d in sorted(dataset):
        trajs = _ids(dataset[d])
        subset = greedy_compatible_subset(matrices[d], params.nu, rng) if len(trajs) >= 2 else trajs
        if len(subset) >= params.n_trajectories:
            kept[d] = subset[: params.n_trajectories]
    chosen = _pick_drivers(list(kept), params.n_drivers, rng, f"threshold {params.nu}")
    selection = {d: kept[d] for d in chosen}
    return _finish(f"Tb-{params.n_drivers}_{params.nu:g}", "threshold", params, selection, matrices)


def average_similarity(sim: SimilarityMatrix) -> np.ndarray:
    """Mean score of each trajectory against all others of the same driver."""
    n = len(sim.trajectory_ids)
    return (sim.scores.sum(axis=1) - np.diag(sim.scores)) / (n - 1)


def similarity_buckets(sim: SimilarityMatrix, thresholds: Sequence[float]) -> list[list]:
    """Bucket i holds trajectories with average similarity in [nu_{i-1}, nu_i), nu_0 = 0."""
    avg = average_similarity(sim)
    edges = [0.0] + list(thresholds)
    return [
        [tid for tid, a in zip(sim.trajectory_ids, avg) if lo <= a < hi]
        for lo, hi in zip(edges, edges[1:])
    ]


def stratified_sample(
    dataset: Mapping[str, Sequence[Trajectory]],
    params: SamplingParams,
    matrices: Mapping[str, SimilarityMatrix] | None = None,
) -> DatasetManifest:
    m = len(params.thresholds)
    if params.n_trajectories % m:
        raise SamplingError(f"n_trajectories={params.n_trajectories} is not divisible by {m} buckets")
    per_bucket = params.n_trajectories // m
    matrices = _matrices(dataset, matrices)
    buckets = {}
    for d in sorted(dataset):
        if d not in matrices:
            continue
        b = similarity_buckets(matrices[d], params.thresholds)
        if all(len(x) >= per_bucket for x in b):
            buckets[d] = b
    rng = np.random.default_rng(params.seed)
    chosen = _pick_drivers(list(buckets), params.n_drivers, rng, "stratified sampling")
    selection = {}
    for d in chosen:
        picked = []
        for b in buckets[d]:
            idx = rng.choice(len(b), size=per_bucket, replace=False)
            picked.extend(b[i] for i in sorted(idx))
        selection[d] = picked
    return _finish(f"St-{params.n_drivers}", "stratified", params, selection, matrices)


def random_sample(
    dataset: Mapping[str, Sequence[Trajectory]],
    params: SamplingParams,
    matrices: Mapping[str, SimilarityMatrix] | None = None,
) -> DatasetManifest:
    rng = np.random.default_rng(params.seed)
    eligible = [d for d in sorted(dataset) if len(dataset[d]) >= params.n_trajectories]
    chosen = _pick_drivers(eligible, params.n_drivers, rng, "random sampling")
    selection = {}
    for d in chosen:
        tids = _ids(dataset[d])
        idx = rng.choice(len(tids), size=params.n_trajectories, replace=False)
        selection[d] = [tids[i] for i in sorted(idx)]
    return _finish(f"Rd-{params.n_drivers}", "random", params, selection, matrices)


def manifest_stats(manifest: DatasetManifest, matrices: Mapping[str, SimilarityMatrix]) -> dict:
    """P50 / P90 / max over every intra-driver pair kept in the manifest."""
    scores = []
    for d in manifest.drivers():
        tids = manifest.trajectories(d)
        if d not in matrices:
            continue
        sim = matrices[d]
        idx = [sim.index(t) for t in tids]
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                scores.append(sim.scores[idx[a], idx[b]])
    s = summarize(scores)
    return {"p50": s["p50"], "p90": s["p90"], "max": s["max"]}


def sample(strategy: str, dataset, params: SamplingParams, matrices=None) -> DatasetManifest:
    fn = {"threshold": threshold_sample, "stratified": stratified_sample, "random": random_sample}.get(strategy)
    if fn is None:
        raise ValueError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return fn(dataset, params, matrices)
