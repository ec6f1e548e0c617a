"""k-means over unlabeled embeddings, class centers, and cluster pseudo-labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import numpy_rng


class ClusterCapacityError(ValueError):
    pass


class EmptyClassError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Clustering:
    """Result of one k-means run.

    ``assignment[i]`` is the cluster of ``node_ids[i]``; clusters that ended
    empty keep their last center and are listed in ``empty_clusters``.
    """

    k_prime: int
    node_ids: np.ndarray
    assignment: np.ndarray
    centers: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: tuple[float, ...] = ()
    empty_clusters: tuple[int, ...] = ()

    def members(self, cluster: int) -> np.ndarray:
        return self.node_ids[self.assignment == cluster]


@dataclass(frozen=True, eq=False)
class ClassCenters:
    centers: np.ndarray
    counts: np.ndarray

    @property
    def k(self) -> int:
        return self.centers.shape[0]


def l2_normalize(h: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return h / norms


def _sq_dists(x: np.ndarray, c: np.ndarray, x_sq: np.ndarray) -> np.ndarray:
    d = x_sq[:, None] - 2.0 * (x @ c.T) + np.einsum("ij,ij->i", c, c)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _assign(x, c, x_sq):
    d = _sq_dists(x, c, x_sq)
    a = np.argmin(d, axis=1)  # lowest cluster id on ties
    # exact residuals so the reported objective does not inherit expansion round-off
    r = x - c[a]
    return a, np.einsum("ij,ij->i", r, r)


def _plus_plus(x: np.ndarray, k: int, rng: np.random.Generator, x_sq) -> np.ndarray:
    n = x.shape[0]
    idx = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[idx], x_sq)[:, 0]
    d2[idx[0]] = 0.0
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
            while d2[nxt] == 0:  # guard against landing on a zero-mass point at a boundary
                nxt -= 1
        else:
            nxt = int(rng.integers(n))
        idx.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]], x_sq)[:, 0])
        d2[nxt] = 0.0
    return x[idx].copy()


def kmeans(
    h: np.ndarray,
    k_prime: int,
    seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-4,
    node_ids=None,
) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Points are processed in ascending ``node_ids`` order (default: row order),
    so a permutation of the input rows gives the same clustering.  Stops when
    no center moves more than ``tol`` or after ``max_iters`` updates.
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] < 1:
        raise ValueError("embeddings must be a 2-D matrix with at least one column")
    n = h.shape[0]
    if not 1 <= k_prime <= n:
        raise ClusterCapacityError(f"k_prime={k_prime} but only {n} points")
    ids = np.arange(n) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    x = h[order]
    x_sq = np.einsum("ij,ij->i", x, x)
    rng = numpy_rng(seed)

    centers = _plus_plus(x, k_prime, rng, x_sq)
    history = []
    iters = 0
    for iters in range(1, max_iters + 1):
        a, d2 = _assign(x, centers, x_sq)
        history.append(float(d2.sum()))
        counts = np.bincount(a, minlength=k_prime)
        sums = np.zeros_like(centers)
        np.add.at(sums, a, x)
        new = centers.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            far = d2.copy()
            for c in empty:
                j = int(np.argmax(far))
                new[c] = x[j]
                far[j] = -1.0
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift < tol:
            break

    a, d2 = _assign(x, centers, x_sq)
    history.append(float(d2.sum()))
    counts = np.bincount(a, minlength=k_prime)
    assignment = np.empty(n, dtype=np.int64)
    assignment[order] = a
    return Clustering(
        k_prime=k_prime,
        node_ids=ids.copy(),
        assignment=assignment,
        centers=centers,
        inertia=history[-1],
        iterations_run=iters,
        inertia_history=tuple(history),
        empty_clusters=tuple(int(c) for c in np.flatnonzero(counts == 0)),
    )


def class_centers(h_l: np.ndarray, labels, k: int | None = None) -> ClassCenters:
    """Per-class mean of labeled embeddings."""
    h_l = np.asarray(h_l, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    counts = np.bincount(labels, minlength=k)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise EmptyClassError(f"no labeled nodes for classes {missing.tolist()}")
    sums = np.zeros((k, h_l.shape[1]))
    np.add.at(sums, labels, h_l)
    return ClassCenters(centers=sums / counts[:, None], counts=counts)


def assign_cluster_labels(cl: Clustering, cc: ClassCenters) -> np.ndarray:
    """Label each cluster with its nearest class center (lowest class on ties)."""
    diff = cl.centers[:, None, :] - cc.centers[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    return np.argmin(d, axis=1)


def cluster_label_sets(cl: Clustering, cluster_labels: np.ndarray, k: int) -> list[np.ndarray]:
    """Per-class node sets: union of all clusters carrying that class label."""
    node_label = cluster_labels[cl.assignment]
    return [np.sort(cl.node_ids[node_label == m]) for m in range(k)]


def write_clustering_csv(path: str | Path, cl: Clustering, cluster_labels: np.ndarray) -> None:
    order = np.argsort(cl.node_ids, kind="stable")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "cluster_id", "class_label"])
        for i in order:
            c = int(cl.assignment[i])
            w.writerow([int(cl.node_ids[i]), c, int(cluster_labels[c])])
