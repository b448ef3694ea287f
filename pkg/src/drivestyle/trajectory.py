"""Telemetry records, CSV I/O and trajectory preprocessing."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

SENSOR_FIELDS = ("speed", "accel", "rpm", "lat", "lng", "head", "acl_x", "acl_y", "acl_z")
CSV_HEADER = ("driver_id", "trajectory_id", "t") + SENSOR_FIELDS


class TelemetryFormatError(ValueError):
    """Raised for malformed telemetry input."""


@dataclass(frozen=True)
class DataPoint:
    t: int
    speed: Optional[float] = None
    accel: Optional[float] = None
    rpm: Optional[float] = None
    lat: Optional[float] = None
    lng: Optional[float] = None
    head: Optional[float] = None
    acl_x: Optional[float] = None
    acl_y: Optional[float] = None
    acl_z: Optional[float] = None

    def __post_init__(self):
        if self.lat is not None and not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if self.lng is not None and not -180.0 <= self.lng <= 180.0:
            raise ValueError(f"longitude out of range: {self.lng}")
        if self.head is not None and not 0.0 <= self.head <= 359.0:
            raise ValueError(f"heading out of range: {self.head}")
        if self.rpm is not None and self.rpm < 0:
            raise ValueError(f"negative rpm: {self.rpm}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered telemetry of one trip.

    Stored column-wise: ``t`` holds integer seconds, every sensor column is a
    float array with NaN marking a missing reading.
    """

    trajectory_id: str
    driver_id: str
    t: np.ndarray
    columns: dict = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.int64)
        if t.ndim != 1 or len(t) < 2:
            raise ValueError(f"trajectory {self.trajectory_id!r} needs at least 2 points")
        if np.any(np.diff(t) <= 0):
            raise ValueError(f"trajectory {self.trajectory_id!r} timestamps not strictly increasing")
        cols = {}
        for name in SENSOR_FIELDS:
            col = np.asarray(self.columns.get(name, np.full(len(t), np.nan)), dtype=np.float64)
            if col.shape != t.shape:
                raise ValueError(f"column {name} has length {len(col)}, expected {len(t)}")
            cols[name] = _frozen(col)
        lat, lng, head, rpm = cols["lat"], cols["lng"], cols["head"], cols["rpm"]
        with np.errstate(invalid="ignore"):
            if np.any(np.abs(lat) > 90) or np.any(np.abs(lng) > 180):
                raise ValueError(f"trajectory {self.trajectory_id!r} has coordinates out of range")
            if np.any((head < 0) | (head > 359)):
                raise ValueError(f"trajectory {self.trajectory_id!r} has heading out of [0, 359]")
            if np.any(rpm < 0):
                raise ValueError(f"trajectory {self.trajectory_id!r} has negative rpm")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def duration(self) -> int:
        return int(self.t[-1] - self.t[0])

    @property
    def points(self) -> list[DataPoint]:
        out = []
        for i in range(len(self.t)):
            vals = {}
            for name in SENSOR_FIELDS:
                v = self.columns[name][i]
                vals[name] = None if math.isnan(v) else float(v)
            out.append(DataPoint(t=int(self.t[i]), **vals))
        return out

    @classmethod
    def from_points(cls, trajectory_id: str, driver_id: str, points: Iterable[DataPoint]) -> "Trajectory":
        points = list(points)
        cols = {
            name: [np.nan if getattr(p, name) is None else getattr(p, name) for p in points]
            for name in SENSOR_FIELDS
        }
        return cls(trajectory_id, driver_id, np.array([p.t for p in points]), cols)

    def has_missing(self) -> bool:
        return any(np.isnan(c).any() for c in self.columns.values())

    def select(self, mask: np.ndarray) -> "Trajectory":
        return Trajectory(
            self.trajectory_id,
            self.driver_id,
            self.t[mask],
            {k: v[mask] for k, v in self.columns.items()},
        )

    def same_as(self, other: "Trajectory") -> bool:
        return (
            self.trajectory_id == other.trajectory_id
            and self.driver_id == other.driver_id
            and np.array_equal(self.t, other.t)
            and all(np.array_equal(self[k], other[k], equal_nan=True) for k in SENSOR_FIELDS)
        )


@dataclass(frozen=True)
class PreprocessConfig:
    trim_seconds: float = 120.0
    min_duration: float = 600.0
    max_duration: float = 1800.0
    drop_missing: bool = True

    def __post_init__(self):
        if self.trim_seconds < 0:
            raise ValueError("trim_seconds must be non-negative")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")


def _parse_float(text: str, line: int, name: str) -> float:
    if text == "":
        return np.nan
    try:
        value = float(text)
    except ValueError:
        raise TelemetryFormatError(f"line {line}: bad value {text!r} for {name}") from None
    if math.isnan(value):
        raise TelemetryFormatError(f"line {line}: NaN literal for {name}; use an empty field")
    return value


def parse_trajectories(stream: IO[bytes] | IO[str] | bytes | str) -> list[Trajectory]:
    """Parse the telemetry CSV into trajectories.

    Rows may arrive in any order; they are grouped by (driver_id,
    trajectory_id) and sorted by timestamp. Output order follows first
    appearance of each group.
    """
    if isinstance(stream, bytes):
        text = stream.decode("utf-8")
    elif isinstance(stream, str):
        text = stream
    else:
        raw = stream.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    if not text.strip():
        return []

    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise TelemetryFormatError(f"line 1: unexpected header {header!r}")

    groups: dict[tuple[str, str], list[tuple[int, list[float]]]] = {}
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise TelemetryFormatError(f"line {line}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        driver_id, traj_id, t_text = row[0], row[1], row[2]
        if not driver_id or not traj_id:
            raise TelemetryFormatError(f"line {line}: empty driver_id or trajectory_id")
        try:
            t = int(t_text)
        except ValueError:
            raise TelemetryFormatError(f"line {line}: bad timestamp {t_text!r}") from None
        values = [_parse_float(v, line, n) for v, n in zip(row[3:], SENSOR_FIELDS)]
        groups.setdefault((driver_id, traj_id), []).append((t, values, line))

    out = []
    for (driver_id, traj_id), rows in groups.items():
        rows.sort(key=lambda r: r[0])
        for a, b in zip(rows, rows[1:]):
            if a[0] == b[0]:
                raise TelemetryFormatError(
                    f"line {b[2]}: duplicate timestamp {b[0]} in trajectory {traj_id!r}"
                )
        t = np.array([r[0] for r in rows], dtype=np.int64)
        vals = np.array([r[1] for r in rows], dtype=np.float64).reshape(len(rows), len(SENSOR_FIELDS))
        try:
            traj = Trajectory(traj_id, driver_id, t, {n: vals[:, k] for k, n in enumerate(SENSOR_FIELDS)})
        except ValueError as exc:
            raise TelemetryFormatError(f"line {rows[0][2]}: {exc}") from None
        out.append(traj)
    return out


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return repr(float(v))


def serialize_trajectories(trajectories: Iterable[Trajectory], stream: IO[str] | None = None) -> str:
    """Write trajectories in the documented CSV schema; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for traj in trajectories:
        cols = [traj[n] for n in SENSOR_FIELDS]
        for i in range(len(traj)):
            w.writerow([traj.driver_id, traj.trajectory_id, int(traj.t[i])] + [_fmt(c[i]) for c in cols])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def preprocess(trajectory: Trajectory, cfg: PreprocessConfig = PreprocessConfig()) -> Optional[Trajectory]:
    """Trim both ends by time, then apply duration and completeness filters.

    Returns None when the trajectory is filtered out.
    """
    t = trajectory.t
    keep = (t - t[0] >= cfg.trim_seconds) & (t[-1] - t >= cfg.trim_seconds)
    if keep.sum() < 2:
        return None
    trimmed = trajectory.select(keep) if not keep.all() else trajectory
    if not cfg.min_duration <= trimmed.duration <= cfg.max_duration:
        return None
    if cfg.drop_missing and trimmed.has_missing():
        return None
    return trimmed


def group_by_driver(trajectories: Iterable[Trajectory]) -> dict[str, list[Trajectory]]:
    out: dict[str, list[Trajectory]] = {}
    for traj in trajectories:
        out.setdefault(traj.driver_id, []).append(traj)
    return out
