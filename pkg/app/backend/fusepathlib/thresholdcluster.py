import logging
from dataclasses import dataclass, field

import numpy as np

from .baselines import Linkage, cut, hierarchical
from .diffop import DifferenceOperator, FusionNorm, block_norms
from .partitions import Partition, partition_from_components
from .solver import prox_penalty

logger = logging.getLogger("fusepath")


@dataclass(frozen=True)
class ThresholdResult:
    """
    Direct estimate of the fused differences obtained by thresholding Dx.

    Attributes:
        lambda_ (float): Threshold
        norm (FusionNorm): Penalty whose proximal map was applied
        gamma_hat (np.ndarray): Thresholded differences, length p * n(n-1)/2
        edges (list[tuple[int, int]]): Pairs whose block of gamma_hat is zero (the adjacency graph)
        partition (Partition): Connected components of the adjacency graph
    """

    lambda_: float
    norm: FusionNorm
    gamma_hat: np.ndarray = field(repr=False)
    edges: list[tuple[int, int]]
    partition: Partition


def threshold_solve(x: np.ndarray, D: DifferenceOperator, lambda_: float, norm: FusionNorm) -> ThresholdResult:
    if lambda_ < 0:
        raise ValueError(f"lambda must be non-negative, got {lambda_}")
    blocks = D.apply_blocks(x)
    gamma = prox_penalty(blocks, lambda_, norm)
    # zero blocks are read off the dual norm directly so ties at exactly lambda count as fused
    fused = block_norms(blocks, norm.dual_exponent) <= lambda_
    gamma[fused] = 0.0
    edges = [pair for pair, is_fused in zip(D.pairs(), fused) if is_fused]
    return ThresholdResult(
        lambda_=float(lambda_),
        norm=norm,
        gamma_hat=gamma.reshape(-1),
        edges=edges,
        partition=partition_from_components(D.n, edges),
    )


def dual_relation_check(x: np.ndarray, D: DifferenceOperator, lambda_: float, result: ThresholdResult) -> float:
    """
    With nu' = Dx - gamma_hat, returns how far max over pairs of ||nu'_C||_s exceeds lambda; zero when
    nu' is dual feasible.
    """
    nu = (D.apply(x) - result.gamma_hat).reshape(D.num_pairs, D.p)
    if not nu.size:
        return 0.0
    return max(0.0, float(np.max(block_norms(nu, result.norm.dual_exponent))) - lambda_)


def slc_equivalence_partition(X: np.ndarray, lambda_: float, norm: FusionNorm) -> Partition:
    """
    Single linkage on pairwise dual-norm distances, cut at height lambda (merges with height <= lambda
    applied). Always equals the partition of `threshold_solve` at the same lambda.
    """
    X = np.asarray(X, dtype=float)
    if lambda_ <= 0:
        raise ValueError(f"lambda must be positive, got {lambda_}")
    if X.shape[0] == 1:
        return Partition.singletons(1)
    dendrogram = hierarchical(X, Linkage.SINGLE, norm.dual_exponent)
    return cut(dendrogram, lambda_)
