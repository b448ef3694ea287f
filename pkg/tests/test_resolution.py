import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import adjusted_mutual_info_score

from drivestyle.resolution import (
    ResolutionReport,
    affinity_propagation,
    ami,
    estimation_error,
    expected_mutual_information,
    latent_trajectory,
    latents_csv,
    resolution_experiment,
)

from oracles import ami_by_permutation


class StubModel:
    """Returns fixed per-segment latents regardless of input."""

    def __init__(self, latents):
        self.latents = np.asarray(latents, dtype=float)

    def infer(self, maps):
        assert len(maps) == len(self.latents)
        return np.zeros((len(maps), 2)), self.latents


def test_latent_examples(rng):
    v = rng.normal(size=100)
    assert np.array_equal(latent_trajectory(StubModel([v]), np.zeros((1, 7, 8))), v)
    assert np.array_equal(latent_trajectory(StubModel([v, -v]), np.zeros((2, 7, 8))), np.zeros(100))
    three = rng.normal(size=(3, 100))
    hand = np.array([(three[0, i] + three[1, i] + three[2, i]) / 3 for i in range(100)])
    assert np.allclose(latent_trajectory(StubModel(three), np.zeros((3, 7, 8))), hand, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        latent_trajectory(StubModel(np.zeros((0, 100))), np.zeros((0, 7, 8)))


def test_latent_from_real_model_matches_fc1(rng):
    from drivestyle.model import ArchitectureConfig, DCRNN

    model = DCRNN(ArchitectureConfig(feature_count=1, num_drivers=2, time_len=8, gru_units=4, fc_units=5), seed=0)
    maps = rng.normal(size=(3, 7, 8))
    assert np.allclose(latent_trajectory(model, maps), model.forward(maps).latent.mean(axis=0))


def test_ap_two_identical_points():
    for pref in (-0.1, -6.5, -1e3):
        r = affinity_propagation([[1.0, 2.0], [1.0, 2.0]], preference=pref)
        assert r.n_clusters == 1 and r.labels.tolist() == [0, 0]


def test_ap_three_triplets():
    centers = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0]])
    offsets = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1]])
    pts = np.concatenate([c + offsets for c in centers])
    r = affinity_propagation(pts, damping=0.5, preference=-1.0)
    assert r.converged and r.n_clusters == 3
    groups = [set(np.flatnonzero(r.labels == k)) for k in range(3)]
    assert sorted(map(sorted, groups)) == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]


def test_ap_very_negative_preference_gives_fewer_exemplars(rng):
    pts = rng.normal(size=(30, 4))
    median = affinity_propagation(pts, damping=0.7)
    low = affinity_propagation(pts, damping=0.7, preference=-1e4)
    assert low.n_clusters < median.n_clusters
    assert low.n_clusters == 1


def test_ap_equal_similarity_rule():
    pts = np.eye(3)  # all pairwise squared distances are 2
    assert affinity_propagation(pts, preference=-3).n_clusters == 1
    assert affinity_propagation(pts, preference=-1).n_clusters == 3


def test_ap_deterministic_and_assigns_to_nearest(rng):
    pts = rng.normal(size=(40, 3))
    a = affinity_propagation(pts, damping=0.8)
    b = affinity_propagation(pts, damping=0.8)
    assert np.array_equal(a.labels, b.labels) and np.array_equal(a.exemplars, b.exemplars)
    d = ((pts[:, None] - pts[a.exemplars][None]) ** 2).sum(-1)
    non_ex = np.setdiff1d(np.arange(40), a.exemplars)
    assert np.array_equal(a.labels[non_ex], np.argmin(d[non_ex], axis=1))


def test_ap_preconditions():
    with pytest.raises(ValueError):
        affinity_propagation([[0.0]])
    with pytest.raises(ValueError):
        affinity_propagation([[0.0], [1.0]], damping=0.4)
    with pytest.raises(ValueError):
        affinity_propagation([[0.0], [np.nan]])


def test_ap_reports_non_convergence():
    pts = np.concatenate([np.random.default_rng(1).normal(c, 0.5, (n, 2)) for c, n in [((0, 0), 23), ((10, 0), 23), ((0, 10), 24)]])
    r = affinity_propagation(pts, damping=0.5, max_iter=30)
    assert not r.converged and r.iterations == 30 and len(r.labels) == 70


def test_ap_agrees_with_sklearn_on_blobs():
    from sklearn.cluster import AffinityPropagation

    rng = np.random.default_rng(3)
    pts = np.concatenate([rng.normal(c, 0.3, (10, 2)) for c in ([0, 0], [8, 0], [0, 8], [8, 8])])
    ours = affinity_propagation(pts, damping=0.7, preference=-20.0)
    ref = AffinityPropagation(damping=0.7, preference=-20.0, random_state=0).fit(pts)
    assert ours.n_clusters == len(ref.cluster_centers_indices_) == 4
    assert ami(ours.labels, ref.labels_) == pytest.approx(1.0)


def test_ami_examples():
    assert ami([0, 0, 1, 1, 2], [5, 5, 3, 3, 9]) == pytest.approx(1.0, abs=1e-9)
    assert ami([0] * 6, list(range(6))) == 0.0
    assert ami([1, 1, 1], [2, 2, 2]) == 1.0
    assert ami(list(range(5)), list("abcde")) == 1.0
    with pytest.raises(ValueError):
        ami([0, 1], [0])


def test_ami_matches_permutation_oracle():
    u = [0, 0, 0, 1, 1, 2, 2, 2]
    v = [0, 0, 1, 1, 1, 1, 2, 2]
    expected, emi = ami_by_permutation(u, v)
    a, b = np.bincount(u), np.bincount(v)
    assert expected_mutual_information(a, b, 8) == pytest.approx(emi, rel=1e-12)
    assert ami(u, v) == pytest.approx(expected, rel=1e-10)


labelings = st.integers(1, 30).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 4), min_size=n, max_size=n), st.lists(st.integers(0, 4), min_size=n, max_size=n))
)


@given(labelings, st.permutations(range(5)))
def test_ami_symmetry_permutation_and_sklearn(pair, perm):
    u, v = pair
    a = ami(u, v)
    assert a <= 1.0 + 1e-12 and a >= -1.0
    assert a == pytest.approx(ami(v, u), abs=1e-12)
    assert a == pytest.approx(ami([perm[x] for x in u], v), abs=1e-12)
    assert a == pytest.approx(adjusted_mutual_info_score(v, u), abs=1e-9)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=40).filter(lambda x: 1 < len(set(x)) < len(x)))
def test_ami_self_is_one(u):
    assert ami(u, u) == pytest.approx(1.0, abs=1e-9)


def test_ami_random_labelings_near_zero():
    rng = np.random.default_rng(0)
    vals = [ami(rng.integers(0, 5, 200), rng.integers(0, 5, 200)) for _ in range(20)]
    assert max(abs(v) for v in vals) < 0.05


def test_estimation_error():
    assert estimation_error(10, 10) == 0
    assert estimation_error(12, 10) == 2
    assert estimation_error(7, 10) == 3


def _labels(drivers, per):
    return {f"d{d}-t{t}": f"d{d}" for d in range(drivers) for t in range(per)}


def test_experiment_with_ideal_latents():
    labels = _labels(12, 7)
    lat = {tid: np.eye(12)[int(d[1:])] * 10 for tid, d in labels.items()}
    rep = resolution_experiment(lat, labels, subsets=5, drivers_per_subset=10, seed=1, damping=0.5, preference=-1.0)
    assert rep.average_ami == pytest.approx(1.0) and rep.average_ee == 0.0
    assert rep.std_ami == pytest.approx(0.0, abs=1e-12) and len(rep.per_subset) == 5
    assert all(len(r["drivers"]) == 10 for r in rep.per_subset)


def test_experiment_with_random_latents():
    rng = np.random.default_rng(5)
    labels = _labels(10, 7)
    lat = {tid: rng.normal(size=100) for tid in labels}
    rep = resolution_experiment(lat, labels, subsets=4, drivers_per_subset=10, seed=2, damping=0.7)
    assert abs(rep.average_ami) < 0.1


def test_experiment_errors_and_determinism():
    labels = _labels(3, 4)
    lat = {tid: np.arange(5.0) * i for i, tid in enumerate(sorted(labels))}
    with pytest.raises(ValueError):
        resolution_experiment(lat, labels, subsets=1, drivers_per_subset=4)
    a = resolution_experiment(lat, labels, subsets=3, drivers_per_subset=2, seed=9, damping=0.7)
    b = resolution_experiment(lat, labels, subsets=3, drivers_per_subset=2, seed=9, damping=0.7, workers=2)
    assert a.to_json() == b.to_json()


def test_report_json_and_latent_csv():
    rep = ResolutionReport(0.5, 0.1, 1.0, 0.5, 2, [])
    text = rep.to_json()
    assert '"Average-AMI": 0.5' in text and '"Average-EE": 1.0' in text
    csv_text = latents_csv({"b": np.array([1.0, 2.0]), "a": np.array([3.0, 4.0])}, {"a": "X", "b": "Y"})
    assert csv_text.splitlines() == ["trajectory_id,driver_id,z0,z1", "a,X,3.0,4.0", "b,Y,1.0,2.0"]
