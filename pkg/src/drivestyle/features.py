"""Segment-level feature maps: basic per-point series and frame statistics."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .similarity import haversine_pairs
from .trajectory import Trajectory

BASIC_FEATURES = (
    "speed",
    "accel",
    "gps_speed",
    "gps_accel",
    "angular_speed",
    "rpm",
    "head",
    "acl_x",
    "acl_y",
    "acl_z",
)
DERIVED_FEATURES = ("gps_speed", "gps_accel", "angular_speed")
STATISTICS = ("mean", "min", "max", "p25", "p50", "p75", "std")
N_STATS = len(STATISTICS)


@dataclass(frozen=True)
class EncodingConfig:
    l1: int = 256
    l2: int = 4
    features: tuple = ("speed", "accel", "rpm")

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise ValueError("feature subset is empty")
        unknown = [f for f in self.features if f not in BASIC_FEATURES]
        if unknown:
            raise ValueError(f"unknown features {unknown}; choose from {BASIC_FEATURES}")
        if len(set(self.features)) != len(self.features):
            raise ValueError("duplicate features")
        if self.l1 % 2 or self.l2 % 2:
            raise ValueError("l1 and l2 must be even")
        if not 0 < self.l2 < self.l1:
            raise ValueError("need 0 < l2 < l1")
        if (2 * self.l1) % self.l2:
            raise ValueError("l2 must divide 2 * l1")

    @property
    def time_len(self) -> int:
        return 2 * self.l1 // self.l2

    @property
    def map_shape(self) -> tuple[int, int]:
        return (N_STATS * len(self.features), self.time_len)


def _backfill(values: np.ndarray, first_defined: int) -> np.ndarray:
    if len(values) > first_defined:
        values[:first_defined] = values[first_defined]
    else:
        values[:] = 0.0
    return values


def derive_point_features(trajectory: Trajectory) -> dict[str, np.ndarray]:
    """GPS speed, GPS acceleration and angular speed per point."""
    t = trajectory.t.astype(np.float64)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("non-positive time step")
    lat, lng = trajectory["lat"], trajectory["lng"]
    step = haversine_pairs(lat[:-1], lng[:-1], lat[1:], lng[1:])

    gps_speed = np.empty(len(t))
    gps_speed[1:] = step / dt
    _backfill(gps_speed, 1)

    gps_accel = np.empty(len(t))
    gps_accel[1:] = np.diff(gps_speed) / dt
    _backfill(gps_accel, 2)

    turn = np.diff(trajectory["head"])
    turn = 180.0 - np.mod(180.0 - turn, 360.0)  # wrapped into (-180, 180]
    angular = np.empty(len(t))
    angular[1:] = turn / dt
    _backfill(angular, 1)
    return {"gps_speed": gps_speed, "gps_accel": gps_accel, "angular_speed": angular}


def feature_table(trajectory: Trajectory, features: Sequence[str]) -> np.ndarray:
    """Stack the requested basic features into a |F| x n array."""
    derived = None
    rows = []
    for name in features:
        if name in DERIVED_FEATURES:
            if derived is None:
                derived = derive_point_features(trajectory)
            rows.append(derived[name])
        else:
            rows.append(np.asarray(trajectory[name], dtype=np.float64))
    return np.vstack(rows)


def segment(trajectory: Trajectory, cfg: EncodingConfig) -> list[slice]:
    """Windows of l1 points with a shift of l1/2; a short tail is dropped."""
    n = len(trajectory)
    half = cfg.l1 // 2
    k = (2 * n) // cfg.l1 - 1
    return [slice(j * half, j * half + cfg.l1) for j in range(max(k, 0))]


def basic_feature_map(table: np.ndarray, window: slice, cfg: EncodingConfig) -> np.ndarray:
    """|F| x l1 slice of a feature table (see ``feature_table``)."""
    m = np.array(table[:, window], dtype=np.float64)
    if m.shape != (len(cfg.features), cfg.l1):
        raise ValueError(f"window gives shape {m.shape}, expected {(len(cfg.features), cfg.l1)}")
    bad = np.argwhere(np.isnan(m))
    if len(bad):
        r, c = bad[0]
        raise ValueError(f"missing value for feature {cfg.features[r]!r} at index {window.start + c}")
    return m


def aggregate_feature_map(basic: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """7|F| x (2 l1 / l2) frame statistics.

    Frames are l2 wide with shift l2/2; the right edge is zero-padded by l2/2
    so the final frame is full. Rows per feature: mean, min, max, P25, P50,
    P75, population std.
    """
    n_feat, l1 = basic.shape
    if l1 != cfg.l1:
        raise ValueError(f"basic map has {l1} columns, expected {cfg.l1}")
    half = cfg.l2 // 2
    padded = np.concatenate([basic, np.zeros((n_feat, half))], axis=1)
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.l2, axis=1)[:, ::half]
    # frames: |F| x n_frames x l2
    q = np.percentile(frames, [25, 50, 75], axis=2)
    stats = np.stack(
        [frames.mean(axis=2), frames.min(axis=2), frames.max(axis=2), q[0], q[1], q[2], frames.std(axis=2)],
        axis=1,
    )
    return stats.reshape(n_feat * N_STATS, -1)


def encode_trajectory(trajectory: Trajectory, cfg: EncodingConfig) -> np.ndarray:
    """Aggregate maps for every segment, shape k x 7|F| x (2 l1 / l2)."""
    windows = segment(trajectory, cfg)
    if not windows:
        return np.zeros((0,) + cfg.map_shape)
    table = feature_table(trajectory, cfg.features)
    return np.stack([aggregate_feature_map(basic_feature_map(table, w, cfg), cfg) for w in windows])


# --- binary container -------------------------------------------------------

MAGIC = b"DPFM"
VERSION = 1


@dataclass
class EncodedSegments:
    """Aggregate maps with their (trajectory_id, segment index) keys."""

    features: tuple
    trajectory_ids: list
    segment_index: list
    maps: np.ndarray  # n x rows x cols

    def for_trajectory(self, trajectory_id) -> np.ndarray:
        idx = [i for i, t in enumerate(self.trajectory_ids) if t == trajectory_id]
        return self.maps[idx]

    def by_trajectory(self) -> dict:
        out: dict = {}
        for i, tid in enumerate(self.trajectory_ids):
            out.setdefault(tid, []).append(i)
        return {tid: self.maps[idx] for tid, idx in out.items()}


def encode_many(trajectories: Iterable[Trajectory], cfg: EncodingConfig) -> EncodedSegments:
    ids, seg, maps = [], [], []
    for traj in trajectories:
        m = encode_trajectory(traj, cfg)
        ids.extend([traj.trajectory_id] * len(m))
        seg.extend(range(len(m)))
        maps.append(m)
    arr = np.concatenate(maps) if maps else np.zeros((0,) + cfg.map_shape)
    return EncodedSegments(cfg.features, ids, seg, arr)


def _put_str(out: BinaryIO, s: str) -> None:
    b = s.encode("utf-8")
    out.write(struct.pack("<H", len(b)))
    out.write(b)


def _get_str(inp: BinaryIO) -> str:
    (n,) = struct.unpack("<H", inp.read(2))
    return inp.read(n).decode("utf-8")


def write_segments(enc: EncodedSegments, out: BinaryIO) -> None:
    """DPFM container: header, feature-name table, then one record per segment."""
    n, rows, cols = enc.maps.shape
    out.write(MAGIC)
    out.write(struct.pack("<HHIII", VERSION, len(enc.features), rows, cols, n))
    for name in enc.features:
        _put_str(out, name)
    for tid, k, m in zip(enc.trajectory_ids, enc.segment_index, enc.maps):
        _put_str(out, str(tid))
        out.write(struct.pack("<I", k))
        out.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_segments(inp: BinaryIO | bytes) -> EncodedSegments:
    if isinstance(inp, (bytes, bytearray)):
        inp = io.BytesIO(inp)
    if inp.read(4) != MAGIC:
        raise ValueError("not a DPFM feature container")
    version, n_feat, rows, cols, n = struct.unpack("<HHIII", inp.read(16))
    if version != VERSION:
        raise ValueError(f"unsupported DPFM version {version}")
    features = tuple(_get_str(inp) for _ in range(n_feat))
    if rows != N_STATS * n_feat:
        raise ValueError(f"row count {rows} inconsistent with {n_feat} features")
    ids, seg, maps = [], [], np.empty((n, rows, cols))
    size = rows * cols * 8
    for i in range(n):
        ids.append(_get_str(inp))
        (k,) = struct.unpack("<I", inp.read(4))
        seg.append(k)
        buf = inp.read(size)
        if len(buf) != size:
            raise ValueError("truncated DPFM record")
        maps[i] = np.frombuffer(buf, dtype="<f8").reshape(rows, cols)
    return EncodedSegments(features, ids, seg, maps)
