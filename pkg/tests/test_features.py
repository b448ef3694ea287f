import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from drivestyle.features import (
    BASIC_FEATURES,
    EncodingConfig,
    aggregate_feature_map,
    basic_feature_map,
    derive_point_features,
    encode_many,
    encode_trajectory,
    feature_table,
    read_segments,
    segment,
    write_segments,
)
from drivestyle.similarity import haversine

from conftest import make_traj


def test_stationary_gps_features_are_zero():
    d = derive_point_features(make_traj(n=20))
    assert np.all(d["gps_speed"] == 0) and np.all(d["gps_accel"] == 0)


def test_heading_wraparound():
    d = derive_point_features(make_traj(n=2, head=[350, 10]))
    assert d["angular_speed"][1] == 20.0
    d = derive_point_features(make_traj(n=2, head=[10, 350]))
    assert d["angular_speed"][1] == -20.0


def test_gps_speed_on_meridian():
    tr = make_traj(n=3, lat=[0.0, 1.0, 2.0], lng=[0.0, 0.0, 0.0])
    d = derive_point_features(tr)
    expected = haversine((0, 0), (1, 0))
    assert d["gps_speed"][1] == pytest.approx(expected, rel=1e-12)
    assert d["gps_speed"][1] == pytest.approx(111_195, abs=1)
    assert d["gps_speed"][0] == d["gps_speed"][1]  # backfilled
    assert d["gps_accel"][0] == d["gps_accel"][1] == d["gps_accel"][2]


def test_uneven_time_steps():
    from drivestyle.trajectory import Trajectory

    base = make_traj(n=3, lat=[0.0, 0.001, 0.002])
    tr = Trajectory("T", "D", np.array([0, 1, 3]), dict(base.columns))
    d = derive_point_features(tr)
    assert d["gps_speed"][2] == pytest.approx(haversine((0.001, 0), (0.002, 0)) / 2)


@pytest.mark.parametrize("n, k", [(640, 4), (256, 1), (255, 0), (384, 2), (383, 1)])
def test_segment_counts(n, k):
    wins = segment(make_traj(n=n), EncodingConfig())
    assert len(wins) == k
    for j, w in enumerate(wins):
        assert (w.start, w.stop) == (128 * j, 128 * j + 256)


def test_basic_map_examples():
    cfg = EncodingConfig(features=("speed",))
    m = basic_feature_map(feature_table(make_traj(n=300), cfg.features), slice(0, 256), cfg)
    assert m.shape == (1, 256) and np.all(m == 10.0)
    cfg2 = EncodingConfig(features=("speed", "rpm"))
    ramp = np.arange(300, dtype=float)
    tr = make_traj(n=300, speed=ramp, rpm=1000 + ramp)
    m2 = basic_feature_map(feature_table(tr, cfg2.features), slice(10, 266), cfg2)
    assert np.array_equal(m2[0], ramp[10:266]) and np.array_equal(m2[1], 1000 + ramp[10:266])


def test_basic_map_missing_value_names_feature_and_index():
    rpm = np.full(300, 900.0)
    rpm[40] = np.nan
    cfg = EncodingConfig(features=("speed", "rpm"))
    with pytest.raises(ValueError, match=r"'rpm' at index 40"):
        basic_feature_map(feature_table(make_traj(n=300, rpm=rpm), cfg.features), slice(0, 256), cfg)


def test_aggregate_constant():
    cfg = EncodingConfig(l1=16, l2=4, features=("speed",))
    agg = aggregate_feature_map(np.full((1, 16), 3.0), cfg)
    assert agg.shape == (7, 8)
    # the last frame includes zero padding; every full frame is constant
    assert np.all(agg[:6, :-1] == 3.0) and np.all(agg[6, :-1] == 0.0)


def test_aggregate_shape_default_config():
    agg = aggregate_feature_map(np.random.default_rng(0).normal(size=(3, 256)), EncodingConfig())
    assert agg.shape == (21, 128)


def test_frame_statistics_by_hand():
    cfg = EncodingConfig(l1=8, l2=4, features=("speed",))
    agg = aggregate_feature_map(np.array([[1.0, 2.0, 3.0, 4.0, 9.0, 9.0, 9.0, 9.0]]), cfg)
    mean, mn, mx, p25, p50, p75, sd = agg[:, 0]
    assert (mean, mn, mx, p25, p50, p75) == (2.5, 1.0, 4.0, 1.75, 2.5, 3.25)
    assert sd == pytest.approx(np.sqrt(1.25)) and sd == pytest.approx(1.118, abs=1e-3)
    # second frame [3, 4, 9, 9]; last frame [9, 9, 0, 0] carries the padding
    assert agg[:3, 1].tolist() == [6.25, 3.0, 9.0]
    assert agg[:3, 3].tolist() == [4.5, 0.0, 9.0]


feature_sets = st.lists(st.sampled_from(BASIC_FEATURES), min_size=1, max_size=4, unique=True)


@given(feature_sets, st.sampled_from([(16, 4), (32, 8), (64, 4), (256, 4), (20, 10)]), st.integers(0, 1000))
def test_shape_law_and_ordering(features, l, seed):
    l1, l2 = l
    cfg = EncodingConfig(l1=l1, l2=l2, features=tuple(features))
    basic = np.random.default_rng(seed).normal(size=(len(features), l1))
    agg = aggregate_feature_map(basic, cfg)
    assert agg.shape == (7 * len(features), 2 * l1 // l2) == cfg.map_shape
    g = agg.reshape(len(features), 7, -1)
    assert np.all(g[:, 1] <= g[:, 3]) and np.all(g[:, 3] <= g[:, 4])
    assert np.all(g[:, 4] <= g[:, 5]) and np.all(g[:, 5] <= g[:, 2])


@given(st.permutations(range(3)), st.integers(0, 1000))
def test_feature_permutation_permutes_row_groups(perm, seed):
    rng = np.random.default_rng(seed)
    n = 300
    tr = make_traj(n=n, speed=rng.normal(10, 2, n), accel=rng.normal(0, 1, n), rpm=rng.uniform(800, 3000, n))
    feats = ("speed", "accel", "rpm")
    a = encode_trajectory(tr, EncodingConfig(features=feats))
    b = encode_trajectory(tr, EncodingConfig(features=tuple(feats[i] for i in perm)))
    for new, old in enumerate(perm):
        assert np.array_equal(b[:, 7 * new : 7 * new + 7], a[:, 7 * old : 7 * old + 7])


def test_config_invariants():
    for bad in [dict(l1=255), dict(l2=3), dict(l2=256), dict(features=()), dict(features=("bogus",)),
                dict(features=("speed", "speed")), dict(l1=20, l2=6)]:
        with pytest.raises(ValueError):
            EncodingConfig(**bad)


def test_encode_many_and_container_roundtrip(rng):
    n = 700
    trs = [make_traj(f"T{i}", "D", n, speed=rng.normal(10, 1, n), head=rng.integers(0, 360, n), lat=40 + rng.normal(0, 1e-4, n))
           for i in range(3)]
    cfg = EncodingConfig(features=("speed", "angular_speed", "gps_speed"))
    enc = encode_many(trs, cfg)
    assert enc.maps.shape == (12, 21, 128)
    assert enc.trajectory_ids[:5] == ["T0"] * 4 + ["T1"] and enc.segment_index[:5] == [0, 1, 2, 3, 0]
    assert np.array_equal(enc.for_trajectory("T1"), encode_trajectory(trs[1], cfg))
    buf = io.BytesIO()
    write_segments(enc, buf)
    back = read_segments(buf.getvalue())
    assert back.features == enc.features and back.trajectory_ids == enc.trajectory_ids
    assert back.segment_index == enc.segment_index and np.array_equal(back.maps, enc.maps)
    with pytest.raises(ValueError):
        read_segments(b"XXXX" + buf.getvalue()[4:])


def test_short_trajectory_encodes_to_nothing():
    assert encode_trajectory(make_traj(n=100), EncodingConfig()).shape == (0, 21, 128)
