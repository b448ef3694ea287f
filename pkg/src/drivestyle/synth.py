"""Synthetic 1 Hz telemetry with per-driver driving style.

Style lives in the speed, acceleration and engine-speed dynamics; each
trajectory follows its own random route so that geography carries no
information about the driver.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .similarity import EARTH_RADIUS_M
from .trajectory import Trajectory

RPM_RANGE = (600.0, 6500.0)
GRAVITY = 9.81
BASE_EPOCH = 1_500_000_000
REGION_CENTER = (39.96, -83.0)
REGION_HALF_SPAN_DEG = 0.6


RPM_KNOT_SPEEDS = (0.0, 10.0, 20.0, 30.0, 45.0)


def rpm_curve(idle: float = 800.0, gain: float = 2200.0, exponent: float = 0.75) -> tuple:
    """Engine speed at RPM_KNOT_SPEEDS: idle + gain * (v / v_max) ** exponent."""
    x = np.array(RPM_KNOT_SPEEDS) / RPM_KNOT_SPEEDS[-1]
    return tuple(float(v) for v in idle + gain * x**exponent)


@dataclass(frozen=True)
class StyleProfile:
    cruise_speed_mean: float = 16.0
    cruise_speed_std: float = 3.0
    accel_aggressiveness: float = 1.5
    rpm_knots_speed: tuple = RPM_KNOT_SPEEDS
    rpm_knots_value: tuple = rpm_curve()
    stop_frequency: float = 0.4
    heading_drift_rate: float = 2.0
    smoothness: float = 0.7

    def __post_init__(self):
        for name in ("cruise_speed_mean", "cruise_speed_std", "accel_aggressiveness",
                     "stop_frequency", "heading_drift_rate", "smoothness"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "rpm_knots_speed", tuple(float(v) for v in self.rpm_knots_speed))
        object.__setattr__(self, "rpm_knots_value", tuple(float(v) for v in self.rpm_knots_value))
        if len(self.rpm_knots_speed) != len(self.rpm_knots_value) or len(self.rpm_knots_speed) < 2:
            raise ValueError("rpm curve needs matching knot lists of length >= 2")
        if np.any(np.diff(self.rpm_knots_speed) <= 0):
            raise ValueError("rpm knot speeds must be strictly increasing")
        if np.any(np.diff(self.rpm_knots_value) < 0):
            raise ValueError("rpm curve must be non-decreasing in speed")
        if min(self.cruise_speed_mean, self.cruise_speed_std, self.heading_drift_rate) <= 0:
            raise ValueError("speed and heading parameters must be positive")
        if self.accel_aggressiveness < 0 or self.stop_frequency < 0:
            raise ValueError("aggressiveness and stop frequency must be non-negative")
        if not 0 <= self.smoothness < 1:
            raise ValueError("smoothness must lie in [0, 1)")

    def rpm_at(self, speed):
        return np.interp(speed, self.rpm_knots_speed, self.rpm_knots_value)


@dataclass(frozen=True)
class SynthConfig:
    n_drivers: int = 10
    n_trajectories_per_driver: int = 40
    min_duration: int = 15 * 60
    max_duration: int = 20 * 60
    separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.separation <= 1.0:
            raise ValueError("separation must lie in [0, 1]")
        # must survive the default preprocessing: 2 x 120 s trim, 600..1800 s kept
        if self.min_duration < 600 + 240 or self.max_duration > 1800 + 240:
            raise ValueError("durations must lie within 840..2040 s to survive preprocessing")
        if self.min_duration > self.max_duration:
            raise ValueError("min_duration exceeds max_duration")


def generate_profile(seed: int, separation: float) -> StyleProfile:
    """Draw a driver profile; parameter spread scales with ``separation``.

    At separation 0 every seed yields the default profile.
    """
    if not 0.0 <= separation <= 1.0:
        raise ValueError("separation must lie in [0, 1]")
    base = StyleProfile()
    rng = np.random.default_rng([seed, 0x5EED])
    u = rng.uniform(-1.0, 1.0, size=9)
    s = separation
    values = rpm_curve(
        idle=800.0 * (1 + 0.25 * s * u[4]),
        gain=2200.0 * (1 + 0.45 * s * u[5]),
        exponent=0.75 * (1 + 0.4 * s * u[6]),
    )
    return StyleProfile(
        cruise_speed_mean=base.cruise_speed_mean * (1 + 0.35 * s * u[0]),
        cruise_speed_std=base.cruise_speed_std * (1 + 0.5 * s * u[1]),
        accel_aggressiveness=base.accel_aggressiveness * (1 + 0.6 * s * u[2]),
        rpm_knots_speed=base.rpm_knots_speed,
        rpm_knots_value=values,
        stop_frequency=base.stop_frequency * (1 + 0.7 * s * u[3]),
        heading_drift_rate=base.heading_drift_rate * (1 + 0.5 * s * u[7]),
        smoothness=base.smoothness + 0.25 * s * u[8],
    )


def _speed_profile(profile: StyleProfile, n: int, rng: np.random.Generator) -> np.ndarray:
    """Speeds v[0..n-1] from a cruise / accelerate / brake / stop regime machine."""
    target = max(2.0, rng.normal(profile.cruise_speed_mean, profile.cruise_speed_std))
    v = np.zeros(n)
    v[0] = target
    a_prev = 0.0
    stop_left = 0
    braking = False
    p_stop = profile.stop_frequency / 60.0
    p_retarget = 1.0 / 45.0
    aggr = profile.accel_aggressiveness
    for i in range(n - 1):
        if stop_left > 0:
            stop_left -= 1
            v[i + 1] = 0.0
            a_prev = 0.0
            continue
        if braking:
            cmd = -max(0.5, aggr) * 1.2
            if v[i] + cmd <= 0.0:
                braking = False
                stop_left = int(rng.integers(5, 40))
                v[i + 1] = 0.0
                a_prev = 0.0
                continue
        else:
            if rng.random() < p_stop and v[i] > 3.0:
                braking = True
                cmd = -max(0.5, aggr) * 1.2
            else:
                if rng.random() < p_retarget:
                    target = max(2.0, rng.normal(profile.cruise_speed_mean, profile.cruise_speed_std))
                gap = target - v[i]
                cmd = float(np.clip(0.35 * gap, -aggr, aggr)) if aggr > 0 else 0.0
                cmd += 0.05 * aggr * rng.normal()
        a = profile.smoothness * a_prev + (1.0 - profile.smoothness) * cmd
        v[i + 1] = max(0.0, v[i] + a)
        a_prev = v[i + 1] - v[i]
    return v


def generate_trajectory(
    profile: StyleProfile,
    duration: int,
    seed: int,
    trajectory_id: str = "T0",
    driver_id: str = "D0",
) -> Trajectory:
    """Simulate ``duration`` seconds (inclusive endpoints) at 1 Hz."""
    rng = np.random.default_rng([seed, 0x7A1])
    n = int(duration) + 1
    t = BASE_EPOCH + int(rng.integers(0, 10_000_000)) + np.arange(n)
    speed = _speed_profile(profile, n, rng)
    accel = np.empty(n)
    accel[:-1] = np.diff(speed)
    accel[-1] = accel[-2]

    drift_sign = rng.choice([-1.0, 1.0])
    turn_rate = np.empty(n)
    heading = np.empty(n)
    heading[0] = rng.uniform(0.0, 360.0)
    bias = drift_sign * 0.1 * profile.heading_drift_rate
    for i in range(n - 1):
        moving = 1.0 if speed[i] > 0.5 else 0.0
        turn_rate[i] = moving * (bias + profile.heading_drift_rate * rng.normal())
        heading[i + 1] = heading[i] + turn_rate[i]
    turn_rate[-1] = turn_rate[-2]

    lat = np.empty(n)
    lng = np.empty(n)
    lat[0] = REGION_CENTER[0] + rng.uniform(-REGION_HALF_SPAN_DEG, REGION_HALF_SPAN_DEG)
    lng[0] = REGION_CENTER[1] + rng.uniform(-REGION_HALF_SPAN_DEG, REGION_HALF_SPAN_DEG)
    for i in range(n - 1):
        step = 0.5 * (speed[i] + speed[i + 1])
        h = math.radians(heading[i + 1])
        lat[i + 1] = lat[i] + math.degrees(step * math.cos(h) / EARTH_RADIUS_M)
        lng[i + 1] = lng[i] + math.degrees(step * math.sin(h) / (EARTH_RADIUS_M * math.cos(math.radians(lat[i]))))

    rpm = profile.rpm_at(speed) * (1.0 + 0.02 * rng.normal(size=n))
    rpm = np.clip(rpm, *RPM_RANGE)
    lateral = speed * np.radians(turn_rate)
    cols = {
        "speed": speed,
        "accel": accel,
        "rpm": rpm,
        "lat": lat,
        "lng": lng,
        "head": np.mod(np.round(heading), 360.0),
        "acl_x": accel + 0.05 * rng.normal(size=n),
        "acl_y": lateral + 0.05 * rng.normal(size=n),
        "acl_z": GRAVITY + 0.05 * rng.normal(size=n),
    }
    return Trajectory(trajectory_id, driver_id, t, cols)


@dataclass
class SyntheticDataset:
    trajectories: list
    labels: dict  # trajectory_id -> driver_id
    profiles: dict = field(default_factory=dict)  # driver_id -> StyleProfile

    def profiles_json(self) -> str:
        return json.dumps({d: asdict(p) for d, p in self.profiles.items()}, indent=2, sort_keys=True) + "\n"


def generate_dataset(cfg: SynthConfig, profiles: dict | None = None) -> SyntheticDataset:
    """``profiles`` (driver_id -> StyleProfile) overrides the drawn profiles."""
    root = np.random.SeedSequence(cfg.seed)
    if profiles is None:
        profiles = {
            f"D{d:03d}": generate_profile(int(root.generate_state(1)[0]) + d, cfg.separation)
            for d in range(cfg.n_drivers)
        }
    trajs, labels = [], {}
    rng = np.random.default_rng(root.spawn(1)[0])
    for driver, prof in profiles.items():
        for k in range(cfg.n_trajectories_per_driver):
            dur = int(rng.integers(cfg.min_duration, cfg.max_duration + 1))
            tid = f"{driver}-T{k:03d}"
            traj = generate_trajectory(prof, dur, int(rng.integers(0, 2**31)), tid, driver)
            trajs.append(traj)
            labels[tid] = driver
    return SyntheticDataset(trajs, labels, dict(profiles))


def with_rpm_curve(profile: StyleProfile, values) -> StyleProfile:
    return replace(profile, rpm_knots_value=tuple(values))
