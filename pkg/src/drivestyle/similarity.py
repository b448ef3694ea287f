"""Point-matching spatial similarity between trajectories."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trajectory import Trajectory

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class MatchThreshold:
    tau: float = 100.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class SimilarityMatrix:
    trajectory_ids: tuple
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        n = len(self.trajectory_ids)
        if s.shape != (n, n):
            raise ValueError(f"scores shape {s.shape} does not match {n} ids")
        s = s.copy()
        s.flags.writeable = False
        object.__setattr__(self, "trajectory_ids", tuple(self.trajectory_ids))
        object.__setattr__(self, "scores", s)

    def index(self, trajectory_id) -> int:
        return self.trajectory_ids.index(trajectory_id)

    def upper(self) -> np.ndarray:
        """Scores of all unordered pairs i < j."""
        i, j = np.triu_indices(len(self.trajectory_ids), k=1)
        return self.scores[i, j]

    def to_csv(self) -> str:
        ids = [str(x) for x in self.trajectory_ids]
        lines = ["," + ",".join(ids)]
        for tid, row in zip(ids, self.scores):
            lines.append(tid + "," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "SimilarityMatrix":
        rows = [ln.split(",") for ln in text.strip().splitlines()]
        ids = rows[0][1:]
        if [r[0] for r in rows[1:]] != ids:
            raise ValueError("row and column headers differ")
        return cls(tuple(ids), np.array([[float(v) for v in r[1:]] for r in rows[1:]]))


def haversine(a, b) -> float:
    """Great-circle distance in meters between two (lat, lng) pairs in degrees."""
    lat1, lng1 = map(math.radians, a)
    lat2, lng2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lng2 - lng1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_matrix(lat1, lng1, lat2, lng2) -> np.ndarray:
    """Pairwise distances (meters), shape len(lat1) x len(lat2)."""
    p1, l1 = np.radians(lat1)[:, None], np.radians(lng1)[:, None]
    p2, l2 = np.radians(lat2)[None, :], np.radians(lng2)[None, :]
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def haversine_pairs(lat1, lng1, lat2, lng2) -> np.ndarray:
    """Element-wise distances (meters) between aligned coordinate arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(lng2) - np.radians(lng1)
    h = np.sin((p2 - p1) / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def _bbox_gap(t1: Trajectory, t2: Trajectory) -> float:
    """Lower bound on the distance between any point of t1 and any of t2."""
    lat1, lng1, lat2, lng2 = t1["lat"], t1["lng"], t2["lat"], t2["lng"]
    lat_gap = max(0.0, np.min(lat2) - np.max(lat1), np.min(lat1) - np.max(lat2))
    bound = EARTH_RADIUS_M * math.radians(lat_gap)
    span = max(np.max(lng1), np.max(lng2)) - min(np.min(lng1), np.min(lng2))
    if span < 180.0:
        # h >= cos^2(lat_max) sin^2(dlng / 2), valid while every pairwise dlng <= 180
        lng_gap = max(0.0, np.min(lng2) - np.max(lng1), np.min(lng1) - np.max(lng2))
        max_abs_lat = max(np.max(np.abs(lat1)), np.max(np.abs(lat2)))
        c = math.cos(math.radians(max_abs_lat)) * math.sin(math.radians(lng_gap) / 2)
        bound = max(bound, 2 * EARTH_RADIUS_M * math.asin(min(1.0, c)))
    return bound * (1 - 1e-9)


def matched_pairs(t1: Trajectory, t2: Trajectory, thr: MatchThreshold = MatchThreshold()) -> list[tuple[int, int]]:
    """Greedy matching: each point of t1 takes the first unmatched point of t2 within tau."""
    if len(t1) == 0 or len(t2) == 0:
        raise ValueError("similarity needs non-empty trajectories")
    if _bbox_gap(t1, t2) >= thr.tau:
        return []
    close = haversine_matrix(t1["lat"], t1["lng"], t2["lat"], t2["lng"]) < thr.tau
    free = np.ones(len(t2), dtype=bool)
    pairs = []
    for i in np.flatnonzero(close.any(axis=1)):
        cand = close[i] & free
        if cand.any():
            j = int(np.argmax(cand))
            free[j] = False
            pairs.append((int(i), j))
            if len(pairs) == len(t2):
                break
    return pairs


def similarity_score(t1: Trajectory, t2: Trajectory, thr: MatchThreshold = MatchThreshold()) -> float:
    """Share of points matched, relative to the shorter trajectory."""
    return len(matched_pairs(t1, t2, thr)) / min(len(t1), len(t2))


def _cell(args):
    t1, t2, thr = args
    return similarity_score(t1, t2, thr)


def pairwise_similarity(
    trajectories: Sequence[Trajectory], thr: MatchThreshold = MatchThreshold(), workers: int = 1
) -> SimilarityMatrix:
    """Symmetric score matrix; cell (i, j) with i < j is scored with trajectory i first."""
    n = len(trajectories)
    if n < 2:
        raise ValueError("pairwise similarity needs at least 2 trajectories")
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    jobs = [(trajectories[i], trajectories[j], thr) for i, j in pairs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(_cell, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        values = [_cell(job) for job in jobs]
    scores = np.eye(n)
    for (i, j), v in zip(pairs, values):
        scores[i, j] = scores[j, i] = v
    return SimilarityMatrix(tuple(t.trajectory_id for t in trajectories), scores)


def summarize(values) -> dict:
    """P50 / P90 / max of a score collection (nearest-rank percentiles)."""
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    if v.size == 0:
        return {"p50": 0.0, "p90": 0.0, "max": 0.0, "count": 0}
    return {
        "p50": nearest_rank(v, 50),
        "p90": nearest_rank(v, 90),
        "max": float(v[-1]),
        "count": int(v.size),
    }


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(round(pct / 100.0 * n, 9)))
    return float(sorted_values[rank - 1])
