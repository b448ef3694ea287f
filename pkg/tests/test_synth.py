import numpy as np
import pytest

from drivestyle.features import EncodingConfig
from drivestyle.nn.optim import OptimizerConfig
from drivestyle.sampling import DatasetManifest, assign_splits
from drivestyle.similarity import MatchThreshold, haversine, pairwise_similarity, summarize
from drivestyle.synth import (
    RPM_RANGE,
    StyleProfile,
    SynthConfig,
    generate_dataset,
    generate_profile,
    generate_trajectory,
    with_rpm_curve,
)
from drivestyle.trajectory import parse_trajectories, preprocess, serialize_trajectories
from drivestyle.training import TrainConfig, train_and_evaluate


def test_profile_examples():
    assert generate_profile(1, 0.0) == generate_profile(2, 0.0) == StyleProfile()
    a, b = generate_profile(1, 1.0), generate_profile(2, 1.0)
    assert a.cruise_speed_mean != b.cruise_speed_mean
    assert generate_profile(7, 0.6) == generate_profile(7, 0.6)
    spread = np.std([generate_profile(s, 1.0).cruise_speed_mean for s in range(50)])
    assert spread > 2.0 and np.std([generate_profile(s, 0.2).cruise_speed_mean for s in range(50)]) < spread


def test_profile_validation():
    with pytest.raises(ValueError):
        StyleProfile(rpm_knots_value=(900, 800, 1000, 1100, 1200))
    with pytest.raises(ValueError):
        StyleProfile(cruise_speed_mean=0)
    with pytest.raises(ValueError):
        generate_profile(0, 1.5)
    with pytest.raises(ValueError):
        SynthConfig(min_duration=600)


def test_degenerate_profile_constant_speed():
    prof = StyleProfile(accel_aggressiveness=0.0, stop_frequency=0.0)
    t = generate_trajectory(prof, 600, seed=3)
    speed = t.columns["speed"]
    assert np.ptp(speed) < 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_kinematic_identity_and_ranges(seed):
    prof = generate_profile(seed, 1.0)
    t = generate_trajectory(prof, 900, seed)
    s, a, rpm = t.columns["speed"], t.columns["accel"], t.columns["rpm"]
    assert len(t.t) == 901 and np.all(np.diff(t.t) == 1)
    assert np.max(np.abs(np.diff(s) - a[:-1])) < 1e-6
    assert np.all(s >= 0) and np.all((rpm >= RPM_RANGE[0]) & (rpm <= RPM_RANGE[1]))


def test_gps_speed_matches_reported():
    t = generate_trajectory(StyleProfile(), 900, seed=5)
    lat, lng, s = t.columns["lat"], t.columns["lng"], t.columns["speed"]
    d = np.array([haversine((lat[i], lng[i]), (lat[i + 1], lng[i + 1])) for i in range(len(s) - 1)])
    mid = 0.5 * (s[:-1] + s[1:])
    moving = mid > 1.0
    rel = np.abs(d[moving] - s[:-1][moving]) / s[:-1][moving]
    assert np.median(rel) < 0.02


def test_dataset_counts_survival_and_determinism():
    cfg = SynthConfig(n_drivers=3, n_trajectories_per_driver=4, seed=9)
    ds = generate_dataset(cfg)
    assert len(ds.trajectories) == 12 and len(set(ds.labels.values())) == 3
    assert all(preprocess(t) is not None for t in ds.trajectories)
    again = generate_dataset(cfg)
    assert serialize_trajectories(ds.trajectories) == serialize_trajectories(again.trajectories)
    assert ds.profiles_json() == again.profiles_json()
    back = parse_trajectories(serialize_trajectories(ds.trajectories))
    assert [b.trajectory_id for b in back] == [t.trajectory_id for t in ds.trajectories]


def test_profile_override_and_rpm_curve_helper():
    prof = with_rpm_curve(StyleProfile(), (600, 900, 1200, 1500, 1800))
    ds = generate_dataset(SynthConfig(n_drivers=1, n_trajectories_per_driver=2), {"X": prof})
    assert set(ds.labels.values()) == {"X"} and ds.profiles["X"].rpm_knots_value[-1] == 1800


def test_intra_driver_spatial_similarity_low():
    ds = generate_dataset(SynthConfig(n_drivers=2, n_trajectories_per_driver=6, seed=4))
    scores = []
    for d in ("D000", "D001"):
        trajs = [t for t in ds.trajectories if t.driver_id == d]
        scores.extend(pairwise_similarity(trajs, MatchThreshold(100.0)).upper())
    assert summarize(scores)["p90"] < 0.2


def _accuracy_at(separation, seed):
    enc = EncodingConfig(l1=32, l2=4)
    trajs, sel = [], {}
    for d in range(4):
        prof = generate_profile(seed * 100 + d, separation)
        for k in range(10):
            tid = f"D{d}-T{k}"
            trajs.append(generate_trajectory(prof, 400, seed * 10_000 + d * 100 + k, tid, f"D{d}"))
            sel.setdefault(f"D{d}", []).append(tid)
    manifest = DatasetManifest("sep", "manual", {}, seed, assign_splits(sel, 0.7, seed))
    cfg = TrainConfig(batch_size=64, epochs=15, seed=seed, optimizer=OptimizerConfig(learning_rate=1e-3))
    _, ev = train_and_evaluate(trajs, manifest, cfg, enc, gru_units=8, fc_units=8, conv1_filters=8, pool=4)
    return ev["seg_accuracy"]


def test_separation_monotonicity_majority():
    wins = 0
    for seed in range(3):
        accs = [_accuracy_at(s, seed) for s in (0.2, 0.6, 1.0)]
        wins += accs[0] <= accs[1] <= accs[2]
    assert wins >= 2
