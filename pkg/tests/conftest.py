import numpy as np
import pytest
from hypothesis import settings

from drivestyle.trajectory import SENSOR_FIELDS, Trajectory

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def make_traj(tid="T1", did="D1", n=10, lat0=40.0, lng0=-83.0, dlat=0.0, dlng=0.0, t0=1000, **cols):
    """Complete trajectory on a straight line; extra keyword columns override defaults."""
    t = t0 + np.arange(n)
    base = {
        "speed": np.full(n, 10.0),
        "accel": np.zeros(n),
        "rpm": np.full(n, 1500.0),
        "lat": lat0 + dlat * np.arange(n),
        "lng": lng0 + dlng * np.arange(n),
        "head": np.zeros(n),
        "acl_x": np.zeros(n),
        "acl_y": np.zeros(n),
        "acl_z": np.full(n, 9.81),
    }
    base.update({k: np.asarray(v, dtype=float) for k, v in cols.items()})
    assert set(base) == set(SENSOR_FIELDS)
    return Trajectory(tid, did, t, base)


def traj_from_coords(coords, tid="T", did="D"):
    coords = np.asarray(coords, dtype=float)
    n = len(coords)
    return make_traj(tid, did, n, lat=coords[:, 0], lng=coords[:, 1])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
