import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .diffop import DifferenceOperator, FusionNorm, SizeGuardError, data_scale
from .replicates import run_replicates
from .solver import PathPoint, PathSolution, SolveSettings, solve_single

logger = logging.getLogger("fusepath")

# The q=2 estimator is only attempted up to this many centroid entries
DF2_MAX_COLUMNS = 4000
# Relative tolerance for treating two centroid entries as the same value
UNIQUE_VALUE_TOLERANCE = 1e-9

class ActiveSetError(ValueError):
    pass


@dataclass(frozen=True)
class ActiveSet:
    """
    Nonzero fused differences of a solution. For q=1 `indices` are coordinates of D u_hat; for q=2 they are
    pair (block) numbers.
    """

    norm: FusionNorm
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_point(cls, point: PathPoint, D: DifferenceOperator, norm: FusionNorm) -> "ActiveSet":
        gamma = point.gamma_hat if point.gamma_hat is not None else D.apply(point.u_hat)
        blocks = gamma.reshape(D.num_pairs, D.p)
        if norm is FusionNorm.L1:
            return cls(norm, np.flatnonzero(blocks.reshape(-1) != 0))
        return cls(norm, np.flatnonzero(np.any(blocks != 0, axis=1)))

    def __len__(self) -> int:
        return int(self.indices.size)

    def fused_components(self, D: DifferenceOperator) -> tuple[int, np.ndarray]:
        """
        Connected components of the fused differences, which span the null space of the reduced operator
        D_{-B}. For q=1 the nodes are the n*p centroid entries joined per feature; for q=2 they are the n
        observations joined by whole fused blocks.
        """
        if self.norm is FusionNorm.L1:
            fused = np.setdiff1d(np.arange(D.shape[0]), self.indices)
            pairs, features = np.divmod(fused, D.p)
            left, right = D.left[pairs] * D.p + features, D.right[pairs] * D.p + features
            nodes = D.layout.size
        else:
            fused = np.setdiff1d(np.arange(D.num_pairs), self.indices)
            left, right = D.left[fused], D.right[fused]
            nodes = D.n
        graph = coo_matrix((np.ones(left.size), (left, right)), shape=(nodes, nodes))
        count, labels = connected_components(graph, directed=False)
        return int(count), labels


@dataclass(frozen=True)
class DofEstimate:
    """
    Attributes:
        value (float): The estimate
        reduced_size (int): Dimension of the system solved, the number of fused groups times p
    """

    value: float
    reduced_size: int


@dataclass(frozen=True)
class MonteCarloDf:
    mean: float
    sd: float
    reps: int
    statistics: np.ndarray = field(repr=False)

    @property
    def standard_error(self) -> float:
        return self.sd / np.sqrt(self.reps)


def df1(point: PathPoint, D: DifferenceOperator) -> float:
    """
    trace(I - D_{-B}^T (D_{-B} D_{-B}^T)^+ D_{-B}) with B the nonzero coordinates of D u_hat. The trace is the
    dimension of the null space of D_{-B}: per feature, the number of groups joined by fused coordinates.
    """
    count, _ = ActiveSet.from_point(point, D, FusionNorm.L1).fused_components(D)
    return float(count)


def df1_unique_count(point: PathPoint) -> int:
    """Number of distinct entries of u_hat, values within 1e-9 * scale counted as one."""
    values = np.sort(np.asarray(point.u_hat, dtype=float))
    if values.size == 0:
        return 0
    tolerance = UNIQUE_VALUE_TOLERANCE * data_scale(values)
    return int(1 + np.count_nonzero(np.diff(values) > tolerance))


def _reduced_curvature(
    point: PathPoint, D: DifferenceOperator, active: ActiveSet, labels: np.ndarray, groups: int
) -> np.ndarray:
    """
    Q^T M Q for Q = G (G^T G)^{-1/2} kron I_p, G the group membership matrix and M the curvature of the group
    penalty over the active pairs. Returns a (groups * p) square matrix in group-major order.
    """
    p = D.p
    pairs = active.indices
    left, right = D.left[pairs], D.right[pairs]
    differences = D.apply_blocks(point.u_hat)[pairs]
    lengths = np.linalg.norm(differences, axis=1)
    if np.any(lengths == 0):
        first = int(np.flatnonzero(lengths == 0)[0])
        raise ActiveSetError(f"Pair ({left[first]}, {right[first]}) is active but its centroid difference is zero")
    unit = differences / lengths[:, None]
    kernels = (np.eye(p)[None, :, :] - unit[:, :, None] * unit[:, None, :]) / lengths[:, None, None]

    a, b = labels[left], labels[right]
    weights = 1.0 / np.sqrt(np.bincount(labels, minlength=groups))
    reduced = np.zeros((groups, groups, p, p))
    np.add.at(reduced, (a, a), (weights[a] ** 2)[:, None, None] * kernels)
    np.add.at(reduced, (b, b), (weights[b] ** 2)[:, None, None] * kernels)
    cross = -(weights[a] * weights[b])[:, None, None] * kernels
    np.add.at(reduced, (a, b), cross)
    np.add.at(reduced, (b, a), cross)
    return reduced.transpose(0, 2, 1, 3).reshape(groups * p, groups * p)


def df2_estimate(point: PathPoint, D: DifferenceOperator, lambda_: float) -> DofEstimate:
    """
    trace((I + lambda P M)^{-1} P), P the projection onto the null space of the fused rows of D and M the
    curvature of the group penalty over the active pairs.

    With P = Q Q^T this equals trace((I + lambda Q^T M Q)^{-1}), a symmetric positive definite system of the
    size of the fused groups times p, so neither D nor an np x np matrix is ever formed.
    """
    size = D.layout.size
    if size > DF2_MAX_COLUMNS:
        raise SizeGuardError(f"The q=2 estimator is limited to {DF2_MAX_COLUMNS} centroid entries, got {size}")
    active = ActiveSet.from_point(point, D, FusionNorm.L2)
    groups, labels = active.fused_components(D)
    reduced_size = groups * D.p
    if lambda_ == 0 or len(active) == 0:
        return DofEstimate(float(reduced_size), reduced_size)

    logger.debug("q=2 estimator at lambda=%g: %d groups, %d active pairs", lambda_, groups, len(active))
    curvature = _reduced_curvature(point, D, active, labels, groups)
    eigenvalues = np.clip(scipy.linalg.eigh(curvature, eigvals_only=True, check_finite=False), 0.0, None)
    return DofEstimate(float(np.sum(1.0 / (1.0 + lambda_ * eigenvalues))), reduced_size)


def df2(point: PathPoint, D: DifferenceOperator, lambda_: float) -> float:
    return df2_estimate(point, D, lambda_).value


def degrees_of_freedom(point: PathPoint, D: DifferenceOperator, norm: FusionNorm) -> float:
    if norm is FusionNorm.L1:
        return df1(point, D)
    return df2(point, D, point.lambda_)


def path_degrees_of_freedom(path: PathSolution, D: DifferenceOperator) -> PathSolution:
    """Returns the path with `df` filled in on every point, using the estimator matching its norm."""
    points = [replace(point, df=degrees_of_freedom(point, D, path.norm)) for point in path.points]
    return replace(path, points=points)


def monte_carlo_df(
    u_true: np.ndarray,
    sigma: float,
    lambda_: float,
    norm: FusionNorm,
    reps: int,
    seed: int,
    D: Optional[DifferenceOperator] = None,
    settings: SolveSettings = SolveSettings(),
    threads: int = 1,
) -> MonteCarloDf:
    """
    Covariance estimate of the degrees of freedom: mean over draws x = u_true + eps of
    (1/sigma^2) sum_j (u_hat_j - u_j)(x_j - u_j). Replicate r draws from the generator seeded with (seed, r).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if reps < 2:
        raise ValueError(f"At least two replicates are needed, got {reps}")
    u_true = np.asarray(u_true, dtype=float)
    if u_true.ndim == 2:
        D = D or DifferenceOperator.for_shape(*u_true.shape)
        u_true = u_true.reshape(-1)
    if D is None:
        raise ValueError("Pass u_true as an n x p matrix or give the difference operator describing its layout")

    def replicate(rep: int) -> float:
        rng = np.random.default_rng([seed, rep])
        noise = sigma * rng.standard_normal(u_true.size)
        point = solve_single(u_true + noise, D, lambda_, norm, settings)
        return float((point.u_hat - u_true) @ noise) / (sigma * sigma)

    statistics = np.asarray(run_replicates(replicate, reps, threads=threads, description="Monte Carlo df"))
    return MonteCarloDf(
        mean=float(statistics.mean()),
        sd=float(statistics.std(ddof=1)),
        reps=reps,
        statistics=statistics,
    )
