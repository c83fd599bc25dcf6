import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial.distance import squareform

from .diffop import pairwise_distances
from .partitions import Partition, PartitionError, UnionFind

logger = logging.getLogger("fusepath")


class Linkage(Enum):
    SINGLE = "single"
    AVERAGE = "average"


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """
    Agglomerative merge tree. Leaves are nodes 0..n-1 and merge k creates node n + k.
    Heights are non-decreasing for both supported linkages.
    """

    n: int
    merges: list[Merge]
    linkage: Linkage

    @property
    def heights(self) -> list[float]:
        return [merge.height for merge in self.merges]


@dataclass(frozen=True)
class KmeansResult:
    """
    Attributes:
        centers (np.ndarray): k x p cluster centers, in the order of the canonical partition labels
        partition (Partition): Nearest-center assignment
        wcss (float): Within-cluster sum of squares at the result
        restarts_used (int): Number of restarts run
        wcss_trace (list[float]): WCSS after every Lloyd iteration of the winning restart
    """

    centers: np.ndarray = field(repr=False)
    partition: Partition
    wcss: float
    restarts_used: int
    wcss_trace: list[float] = field(default_factory=list, repr=False)


def hierarchical(X: np.ndarray, linkage: Linkage = Linkage.SINGLE, order: float = 2.0) -> Dendrogram:
    """
    Agglomerative clustering on the `order`-norm distances between rows of X. Each step merges the
    closest pair of clusters, ties going to the smallest pair of cluster slots; distances are updated
    with the minimum (single) or the size-weighted mean (average, UPGMA).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise ValueError(f"Hierarchical clustering needs at least two observations, got {n}")

    work = squareform(pairwise_distances(X, order))
    np.fill_diagonal(work, np.inf)
    sizes = np.ones(n)
    node_of_slot = list(range(n))
    merges: list[Merge] = []
    for step in range(n - 1):
        # row-major argmin returns the lexicographically smallest (i, j), and i < j by symmetry
        i, j = divmod(int(np.argmin(work)), n)
        height = float(work[i, j])
        merged_size = int(sizes[i] + sizes[j])
        merges.append(Merge(node_of_slot[i], node_of_slot[j], height, merged_size))

        if linkage is Linkage.SINGLE:
            updated = np.minimum(work[i], work[j])
        else:
            updated = (sizes[i] * work[i] + sizes[j] * work[j]) / (sizes[i] + sizes[j])
        work[i, :] = updated
        work[:, i] = updated
        work[i, i] = np.inf
        work[j, :] = np.inf
        work[:, j] = np.inf
        sizes[i] = merged_size
        node_of_slot[i] = n + step

    logger.debug("Built %s linkage dendrogram over %d observations", linkage.value, n)
    return Dendrogram(n=n, merges=merges, linkage=linkage)


def _apply_merges(dendrogram: Dendrogram, merges: list[Merge]) -> Partition:
    n = dendrogram.n
    sets = UnionFind(n)
    leaf_of_node = list(range(n)) + [0] * len(dendrogram.merges)
    for step, merge in enumerate(dendrogram.merges):
        leaf_of_node[n + step] = leaf_of_node[merge.left]
    for merge in merges:
        sets.union(leaf_of_node[merge.left], leaf_of_node[merge.right])
    return sets.partition()


def cut(dendrogram: Dendrogram, height: float) -> Partition:
    """Applies every merge with height <= `height`."""
    return _apply_merges(dendrogram, [merge for merge in dendrogram.merges if merge.height <= height])


def cut_k(dendrogram: Dendrogram, k: int) -> Partition:
    """Applies the first n - k merges, leaving k clusters."""
    if not 1 <= k <= dendrogram.n:
        raise PartitionError(f"k must lie between 1 and {dendrogram.n}, got {k}")
    return _apply_merges(dendrogram, dendrogram.merges[: dendrogram.n - k])


def _squared_distances(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((X[:, None, :] - centers[None, :, :]) ** 2, axis=2)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeds centers with probability proportional to the squared distance to the nearest chosen center."""
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(closest.sum())
        if total > 0:
            index = int(rng.choice(n, p=closest / total))
        else:
            # every remaining point coincides with a center
            remaining = np.setdiff1d(np.arange(n), chosen)
            index = int(rng.choice(remaining))
        chosen.append(index)
        closest = np.minimum(closest, np.sum((X - X[index]) ** 2, axis=1))
    return X[chosen].copy()


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, np.ndarray, list[float]]:
    n, k = X.shape[0], centers.shape[0]
    previous = None
    trace: list[float] = []
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        distances = _squared_distances(X, centers)
        labels = np.argmin(distances, axis=1)
        counts = np.bincount(labels, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # reassign the point farthest from its center, taken from a cluster that can spare it
            cost = distances[np.arange(n), labels].copy()
            cost[counts[labels] <= 1] = -np.inf
            farthest = int(np.argmax(cost))
            counts[labels[farthest]] -= 1
            labels[farthest] = empty
            counts[empty] = 1
            distances[farthest, :] = np.inf
        centers = np.vstack([X[labels == cluster].mean(axis=0) for cluster in range(k)])
        trace.append(float(np.sum((X - centers[labels]) ** 2)))
        if previous is not None and np.array_equal(labels, previous):
            break
        previous = labels
    return centers, labels, trace


def kmeans(X: np.ndarray, k: int, restarts: int = 10, max_iter: int = 300, seed: int = 0) -> KmeansResult:
    """
    Lloyd's algorithm from k-means++ seeds, keeping the restart with the smallest WCSS (earliest on ties).
    Restart r draws from the generator seeded with (seed, r).
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if not 1 <= k <= n:
        raise PartitionError(f"k must lie between 1 and n={n}, got {k}")
    if restarts < 1:
        raise ValueError(f"restarts must be positive, got {restarts}")

    best = None
    for restart in range(restarts):
        rng = np.random.default_rng([seed, restart])
        centers, labels, trace = _lloyd(X, kmeans_plusplus(X, k, rng), max_iter)
        if best is None or trace[-1] < best[2][-1]:
            best = (centers, labels, trace)
    assert best is not None
    centers, labels, trace = best

    # reorder centers to match the canonical (first-appearance) labels
    _, first_seen = np.unique(labels, return_index=True)
    order = np.unique(labels)[np.argsort(first_seen)]
    return KmeansResult(
        centers=centers[order],
        partition=Partition.from_labels(labels.tolist()),
        wcss=trace[-1],
        restarts_used=restarts,
        wcss_trace=trace,
    )
