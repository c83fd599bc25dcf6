from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class PartitionError(ValueError):
    pass


def canonical_labels(labels: Iterable[int]) -> tuple[int, ...]:
    """Relabels clusters 0..k-1 in order of first appearance (equivalently, by smallest member)."""
    mapping: dict[int, int] = {}
    canonical = []
    for label in labels:
        if label not in mapping:
            mapping[label] = len(mapping)
        canonical.append(mapping[label])
    return tuple(canonical)


@dataclass(frozen=True)
class Partition:
    """
    A clustering of observations 0..n-1. Labels are always canonical, so two partitions
    describing the same clustering compare equal.
    """

    labels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", canonical_labels(int(label) for label in self.labels))

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        return cls(tuple(int(label) for label in labels))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple(range(n)))

    @classmethod
    def single_cluster(cls, n: int) -> "Partition":
        return cls((0,) * n)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def k(self) -> int:
        return max(self.labels) + 1 if self.labels else 0

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)

    def clusters(self) -> list[list[int]]:
        members: list[list[int]] = [[] for _ in range(self.k)]
        for index, label in enumerate(self.labels):
            members[label].append(index)
        return members

    def sizes(self) -> list[int]:
        return [len(members) for members in self.clusters()]

    def same_cluster_matrix(self) -> np.ndarray:
        labels = self.as_array()
        return labels[:, None] == labels[None, :]


class UnionFind:
    """
    Disjoint sets over 0..n-1 with path compression and union by rank.
    """

    def __init__(self, n: int):
        self._parent = list(range(n))
        self._rank = [0] * n
        self.num_sets = n

    def find(self, a: int) -> int:
        root = a
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[a] != root:
            self._parent[a], a = root, self._parent[a]
        return root

    def union(self, a: int, b: int) -> bool:
        root_a, root_b = self.find(a), self.find(b)
        if root_a == root_b:
            return False
        if self._rank[root_a] < self._rank[root_b]:
            root_a, root_b = root_b, root_a
        self._parent[root_b] = root_a
        if self._rank[root_a] == self._rank[root_b]:
            self._rank[root_a] += 1
        self.num_sets -= 1
        return True

    def partition(self) -> Partition:
        return Partition(tuple(self.find(a) for a in range(len(self._parent))))


def partition_from_components(n: int, edges: Iterable[tuple[int, int]]) -> Partition:
    """Connected components of the graph on 0..n-1 with the given undirected edges."""
    if n < 1:
        raise PartitionError(f"Need at least one observation, got n={n}")
    sets = UnionFind(n)
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise PartitionError(f"Edge ({i}, {j}) is out of range for n={n}")
        sets.union(i, j)
    return sets.partition()


def rand_index(a: Partition, b: Partition) -> float:
    """Fraction of the n(n-1)/2 observation pairs on which both partitions agree (together vs apart)."""
    if a.n != b.n:
        raise PartitionError(f"Partitions cover different numbers of observations: {a.n} and {b.n}")
    if a.n < 2:
        raise PartitionError("The Rand index needs at least two observations")
    upper = np.triu_indices(a.n, k=1)
    agree = a.same_cluster_matrix()[upper] == b.same_cluster_matrix()[upper]
    return float(np.count_nonzero(agree)) / agree.size
