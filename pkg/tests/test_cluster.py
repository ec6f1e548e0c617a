import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unreal.cluster import (
    ClusterCapacityError,
    EmptyClassError,
    ClassCenters,
    Clustering,
    assign_cluster_labels,
    class_centers,
    cluster_label_sets,
    kmeans,
    l2_normalize,
    write_clustering_csv,
)


def two_blobs(seed=0, n=40):
    """Two tight 2-D blobs far apart; returns points, membership and blob means."""
    r = np.random.default_rng(seed)
    a = r.normal(0, 0.1, (n, 2)) + [-10, 0]
    b = r.normal(0, 0.1, (n, 2)) + [10, 5]
    x = np.vstack([a, b])
    member = np.repeat([0, 1], n)
    return x, member, np.stack([a.mean(0), b.mean(0)])


def recompute_inertia(x, cl):
    return float(((x - cl.centers[cl.assignment]) ** 2).sum())


@pytest.mark.parametrize("seed", range(5))
def test_two_blob_recovery(seed):
    x, member, means = two_blobs(seed)
    cl = kmeans(x, 2, seed=seed)
    # the blob a cluster covers is whichever holds its first point
    relabel = {cl.assignment[0]: 0, cl.assignment[-1]: 1}
    assert len(relabel) == 2
    assert np.array_equal([relabel[c] for c in cl.assignment], member)
    for c, blob in relabel.items():
        assert np.allclose(cl.centers[c], means[blob], atol=1e-6)


def test_every_point_its_own_cluster():
    x = np.random.default_rng(0).normal(size=(12, 3))
    cl = kmeans(x, 12, seed=1)
    assert sorted(cl.assignment.tolist()) == list(range(12))
    assert cl.inertia == pytest.approx(0.0, abs=1e-12)


def test_single_cluster_is_global_mean():
    x = np.random.default_rng(1).normal(size=(30, 4))
    cl = kmeans(x, 1)
    assert np.allclose(cl.centers[0], x.mean(0))
    assert cl.inertia == pytest.approx(x.var(axis=0).sum() * 30)


def test_capacity_error():
    with pytest.raises(ClusterCapacityError):
        kmeans(np.zeros((3, 2)), 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(1, 5))
def test_lloyd_monotone_and_consistent(seed, k, d):
    x = np.random.default_rng(seed).normal(size=(40, d))
    cl = kmeans(x, k, seed=seed)
    hist = np.array(cl.inertia_history)
    assert np.all(np.diff(hist) <= 1e-9)
    assert cl.inertia >= 0
    assert cl.inertia == pytest.approx(recompute_inertia(x, cl), rel=1e-9, abs=1e-9)
    assert cl.assignment.max() < k


def test_duplicate_points_flag_empty_clusters():
    x = np.repeat([[0.0, 0.0], [1.0, 1.0]], 5, axis=0)
    cl = kmeans(x, 4, seed=0)
    assert cl.assignment.max() < 4
    assert cl.inertia == pytest.approx(0.0)
    assert set(cl.empty_clusters) | set(cl.assignment.tolist()) == set(range(4))


def test_permutation_invariance():
    r = np.random.default_rng(3)
    x = r.normal(size=(50, 3))
    ids = np.arange(100, 150)
    perm = r.permutation(50)
    a = kmeans(x, 5, seed=9, node_ids=ids)
    b = kmeans(x[perm], 5, seed=9, node_ids=ids[perm])
    lab_a = dict(zip(a.node_ids.tolist(), a.assignment.tolist()))
    lab_b = dict(zip(b.node_ids.tolist(), b.assignment.tolist()))
    assert lab_a == lab_b
    assert np.array_equal(a.centers, b.centers)


@pytest.mark.parametrize(
    "points,labels,expected",
    [
        ([[0, 0], [2, 2]], [0, 0], [[1, 1]]),
        ([[1, 2], [3, 4], [5, 6]], [0, 1, 2], [[1, 2], [3, 4], [5, 6]]),
    ],
)
def test_class_centers(points, labels, expected):
    cc = class_centers(np.array(points, float), labels)
    assert np.allclose(cc.centers, expected)


def test_class_centers_oracle():
    r = np.random.default_rng(4)
    h = r.normal(size=(60, 5))
    y = np.concatenate([np.arange(4), r.integers(0, 4, 56)])
    cc = class_centers(h, y)
    for m in range(4):
        assert np.allclose(cc.centers[m], h[y == m].mean(0), atol=1e-7)
    assert cc.counts.sum() == 60


def test_class_centers_missing_class():
    with pytest.raises(EmptyClassError):
        class_centers(np.zeros((2, 2)), [0, 2], k=3)


def _fake_clustering(centers, assignment=None, ids=None):
    centers = np.asarray(centers, float)
    n = len(centers) if assignment is None else len(assignment)
    return Clustering(
        k_prime=len(centers),
        node_ids=np.arange(n) if ids is None else np.asarray(ids),
        assignment=np.arange(n) if assignment is None else np.asarray(assignment),
        centers=centers,
        inertia=0.0,
        iterations_run=0,
    )


def test_cluster_label_coincident_and_tie():
    cc = ClassCenters(np.array([[0.0, 5.0], [-1.0, 0.0], [3.0, 3.0], [1.0, 0.0]]), np.ones(4, int))
    cl = _fake_clustering([[3.0, 3.0], [0.0, 0.0]])
    assert assign_cluster_labels(cl, cc).tolist() == [2, 1]


def test_cluster_labels_oracle_and_partition():
    r = np.random.default_rng(5)
    cc = ClassCenters(r.normal(size=(3, 4)), np.ones(3, int))
    cl = _fake_clustering(r.normal(size=(5, 4)), assignment=r.integers(0, 5, 40), ids=np.arange(40) * 2)
    got = assign_cluster_labels(cl, cc)
    table = [[np.linalg.norm(c - m) for m in cc.centers] for c in cl.centers]
    assert got.tolist() == [int(np.argmin(row)) for row in table]
    sets = cluster_label_sets(cl, got, 3)
    union = np.concatenate(sets)
    assert sorted(union.tolist()) == sorted(cl.node_ids.tolist())
    assert len(union) == len(set(union.tolist()))


def test_l2_normalize_handles_zero_rows():
    h = l2_normalize(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(h, [[0.6, 0.8], [0.0, 0.0]])


def test_clustering_csv(tmp_path):
    cl = _fake_clustering([[0.0], [1.0]], assignment=[1, 0, 1], ids=[7, 3, 5])
    write_clustering_csv(tmp_path / "c.csv", cl, np.array([4, 2]))
    assert (tmp_path / "c.csv").read_text().splitlines() == ["node_id,cluster_id,class_label", "3,0,4", "5,1,2", "7,1,2"]
