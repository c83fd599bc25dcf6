import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diffop import DifferenceOperator, FusionNorm, VecLayout, block_norms, data_scale
from .partitions import Partition, partition_from_components

logger = logging.getLogger("fusepath")

# KKT residuals at or below this multiple of the data scale certify a solution
CERTIFICATION_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SolveSettings:
    """
    Settings for the alternating-direction solver.

    Attributes:
        rho (float): Initial augmented-Lagrangian step, adapted by residual balancing
        tol_primal (float): Relative tolerance on the primal residual ||Du - v||
        tol_dual (float): Relative tolerance on the dual residual rho * ||D^T (v - v_prev)||
        max_iter (int): Iteration cap; hitting it flags the point as unconverged
        fuse_tol (float): Centroid differences at or below fuse_tol * scale(x) are treated as fused
        adaptive_rho (bool): Whether to rebalance rho every `rho_update_interval` iterations
        kkt_refine_iter (int): Projected-gradient steps spent tightening the KKT certificate
    """

    rho: float = 1.0
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 100000
    fuse_tol: float = 1e-8
    adaptive_rho: bool = True
    rho_update_interval: int = 10
    kkt_refine_iter: int = 2000

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("Residual tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if self.fuse_tol < 0:
            raise ValueError(f"fuse_tol must be non-negative, got {self.fuse_tol}")


@dataclass(frozen=True)
class PathPoint:
    """
    Solution of the convex clustering problem at one value of lambda.

    Attributes:
        lambda_ (float): Penalty weight
        u_hat (np.ndarray): Centroid vector of length n*p (row-major centroid matrix)
        gamma_hat (Optional[np.ndarray]): Fused differences, equal to D u_hat with exact zeros on fused blocks
        partition (Partition): Clusters induced by the zero blocks of gamma_hat
        rss (float): ||x - u_hat||^2
        iterations (int): Solver iterations used
        kkt_residual (float): Optimality residual from `kkt_check`
        converged (bool): Whether the solver met its stopping rule within max_iter
        certified (bool): Whether kkt_residual is within the certification tolerance
        nu_hat (Optional[np.ndarray]): Dual estimate with x - u_hat = D^T nu_hat
        df (Optional[float]): Degrees-of-freedom estimate, filled in by the dof module
    """

    lambda_: float
    u_hat: np.ndarray = field(repr=False)
    gamma_hat: Optional[np.ndarray] = field(repr=False)
    partition: Partition
    rss: float
    iterations: int
    kkt_residual: float
    converged: bool = True
    certified: bool = True
    nu_hat: Optional[np.ndarray] = field(default=None, repr=False)
    primal_residual: float = 0.0
    dual_residual: float = 0.0
    rho: float = 1.0
    df: Optional[float] = None

    @property
    def k(self) -> int:
        return self.partition.k


@dataclass(frozen=True)
class PathSolution:
    points: list[PathPoint]
    norm: FusionNorm
    layout: VecLayout

    @property
    def lambdas(self) -> list[float]:
        return [point.lambda_ for point in self.points]

    @property
    def cluster_counts(self) -> list[int]:
        return [point.k for point in self.points]

    @property
    def all_converged(self) -> bool:
        return all(point.converged for point in self.points)


@dataclass(frozen=True)
class KktCertificate:
    residual: float
    stationarity: float
    infeasibility: float
    subgradient: np.ndarray = field(repr=False)


def penalty_value(D: DifferenceOperator, norm: FusionNorm, u: np.ndarray) -> float:
    return float(np.sum(block_norms(D.apply_blocks(u), norm.q)))


def objective_value(x: np.ndarray, D: DifferenceOperator, lambda_: float, norm: FusionNorm, u: np.ndarray) -> float:
    residual = np.asarray(x, dtype=float) - u
    return 0.5 * float(residual @ residual) + lambda_ * penalty_value(D, norm, u)


def prox_penalty(blocks: np.ndarray, threshold: float, norm: FusionNorm) -> np.ndarray:
    """
    Proximal map of threshold * sum of block q-norms: elementwise soft-thresholding for q=1,
    group soft-thresholding for q=2. Fused blocks come out exactly zero.
    """
    if norm is FusionNorm.L1:
        return np.sign(blocks) * np.maximum(np.abs(blocks) - threshold, 0.0)
    norms = block_norms(blocks, 2)
    shrink = np.zeros_like(norms)
    positive = norms > 0
    shrink[positive] = np.maximum(1.0 - threshold / norms[positive], 0.0)
    return blocks * shrink[:, None]


def _fused_mask(D: DifferenceOperator, norm: FusionNorm, v: np.ndarray, du: np.ndarray, tolerance: float) -> np.ndarray:
    """Entries (q=1) or whole blocks (q=2, broadcast over the block) treated as fused."""
    v_blocks = v.reshape(D.num_pairs, D.p)
    du_blocks = du.reshape(D.num_pairs, D.p)
    if norm is FusionNorm.L1:
        return (v_blocks == 0) | (np.abs(du_blocks) <= tolerance)
    fused_blocks = np.all(v_blocks == 0, axis=1) | (block_norms(du_blocks, 2) <= tolerance)
    return np.repeat(fused_blocks[:, None], D.p, axis=1)


def _group_means(values: np.ndarray, groups: Partition) -> np.ndarray:
    labels = groups.as_array()
    counts = np.bincount(labels, minlength=groups.k).astype(float)
    sums = np.zeros((groups.k,) + values.shape[1:])
    np.add.at(sums, labels, values)
    means = sums / counts.reshape((-1,) + (1,) * (values.ndim - 1))
    return means[labels]


def polish_centroids(D: DifferenceOperator, norm: FusionNorm, u: np.ndarray, fused: np.ndarray) -> np.ndarray:
    """
    Replaces centroid entries linked through fused differences by their group mean, so that
    fused rows (q=2) or fused coordinates (q=1) become exactly equal.
    """
    matrix = u.reshape(D.n, D.p)
    pairs = D.pairs()
    if norm is FusionNorm.L2:
        edges = [pair for pair, is_fused in zip(pairs, fused[:, 0]) if is_fused]
        groups = partition_from_components(D.n, edges)
        return _group_means(matrix, groups).reshape(-1)
    polished = np.empty_like(matrix)
    for j in range(D.p):
        edges = [pair for pair, is_fused in zip(pairs, fused[:, j]) if is_fused]
        groups = partition_from_components(D.n, edges)
        polished[:, j] = _group_means(matrix[:, j], groups)
    return polished.reshape(-1)


def cluster_extract(point: PathPoint, fuse_tol: float = 1e-8, x: Optional[np.ndarray] = None) -> Partition:
    """
    Clusters from the exact zero blocks of the splitting variable. Points produced without one
    fall back to centroid rows closer than fuse_tol * scale(x) in Euclidean norm; without the data the
    scale of u_hat stands in.
    """
    n = len(point.partition.labels)
    D = DifferenceOperator.for_shape(n, point.u_hat.size // n)
    if point.gamma_hat is not None:
        fused = np.all(point.gamma_hat.reshape(D.num_pairs, D.p) == 0, axis=1)
    else:
        scale = data_scale(point.u_hat if x is None else np.asarray(x, dtype=float))
        fused = block_norms(D.apply_blocks(point.u_hat), 2) <= fuse_tol * scale
    edges = [pair for pair, is_fused in zip(D.pairs(), fused) if is_fused]
    return partition_from_components(n, edges)


def _project_dual_ball(g: np.ndarray, free: np.ndarray, norm: FusionNorm) -> np.ndarray:
    """Projects the free entries of the subgradient onto the unit ball of the dual norm."""
    projected = g.copy()
    if norm is FusionNorm.L1:
        projected[free] = np.clip(projected[free], -1.0, 1.0)
        return projected
    rows = free[:, 0]
    norms = block_norms(projected[rows], 2)
    too_long = norms > 1.0
    scaled = projected[rows]
    scaled[too_long] = scaled[too_long] / norms[too_long, None]
    projected[rows] = scaled
    return projected


def kkt_certificate(
    x: np.ndarray,
    D: DifferenceOperator,
    lambda_: float,
    norm: FusionNorm,
    u_hat: np.ndarray,
    dual_hint: Optional[np.ndarray] = None,
    refine_iter: int = 2000,
) -> KktCertificate:
    """
    Builds a subgradient g with x - u_hat = lambda D^T g. Blocks with nonzero differences fix g
    (direction for q=2, signs for q=1); free entries start from the dual hint or a least-squares
    fit, whichever is closer to stationary, and are refined by accelerated projected gradient onto
    the dual-norm ball.
    """
    x = np.asarray(x, dtype=float)
    u_hat = np.asarray(u_hat, dtype=float)
    scale = data_scale(x)
    if lambda_ == 0:
        stationarity = float(np.max(np.abs(x - u_hat))) if x.size else 0.0
        return KktCertificate(stationarity, stationarity, 0.0, np.zeros((D.num_pairs, D.p)))

    du = D.apply_blocks(u_hat)
    zero_tol = 1e-12 * scale
    g = np.zeros_like(du)
    if norm is FusionNorm.L1:
        fixed = np.abs(du) > zero_tol
        g[fixed] = np.sign(du[fixed])
    else:
        norms = block_norms(du, 2)
        fixed_rows = norms > zero_tol
        g[fixed_rows] = du[fixed_rows] / norms[fixed_rows, None]
        fixed = np.repeat(fixed_rows[:, None], D.p, axis=1)
    free = ~fixed
    target = x - u_hat

    def stationarity_of(candidate: np.ndarray) -> float:
        return float(np.max(np.abs(target - lambda_ * D.apply_adjoint(candidate.reshape(-1)))))

    if free.any():
        remainder = target - lambda_ * D.apply_adjoint(g.reshape(-1))
        fitted = g.copy()
        # the pseudo-inverse of D^T is D / n
        fitted[free] = (D.apply_blocks(remainder) / (lambda_ * D.n))[free]
        g = _project_dual_ball(fitted, free, norm)
        if dual_hint is not None:
            hinted = g.copy()
            hinted[free] = (np.asarray(dual_hint, dtype=float).reshape(D.num_pairs, D.p) / lambda_)[free]
            hinted = _project_dual_ball(hinted, free, norm)
            if stationarity_of(hinted) < stationarity_of(g):
                g = hinted

        if stationarity_of(g) > CERTIFICATION_TOLERANCE * scale:
            step = 1.0 / (lambda_ * lambda_ * D.n)
            previous = g.copy()
            momentum = g.copy()
            t = 1.0
            for _ in range(refine_iter):
                residual = target - lambda_ * D.apply_adjoint(momentum.reshape(-1))
                gradient = -lambda_ * D.apply_blocks(residual)
                candidate = momentum.copy()
                candidate[free] -= step * gradient[free]
                current = _project_dual_ball(candidate, free, norm)
                t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
                momentum = current + ((t - 1.0) / t_next) * (current - previous)
                previous, t = current, t_next
                if stationarity_of(current) <= 0.1 * CERTIFICATION_TOLERANCE * scale:
                    break
            g = previous

    stationarity = stationarity_of(g)
    dual_norms = block_norms(g, norm.dual_exponent)
    infeasibility = max(0.0, float(np.max(dual_norms)) - 1.0) if dual_norms.size else 0.0
    return KktCertificate(stationarity + infeasibility, stationarity, infeasibility, g)


def kkt_check(
    x: np.ndarray,
    D: DifferenceOperator,
    lambda_: float,
    norm: FusionNorm,
    u_hat: np.ndarray,
    dual_hint: Optional[np.ndarray] = None,
) -> float:
    return kkt_certificate(x, D, lambda_, norm, u_hat, dual_hint=dual_hint).residual


def _finish_point(
    x: np.ndarray,
    D: DifferenceOperator,
    lambda_: float,
    norm: FusionNorm,
    u_hat: np.ndarray,
    nu_hat: np.ndarray,
    iterations: int,
    converged: bool,
    primal_residual: float,
    dual_residual: float,
    rho: float,
    refine_iter: int = 2000,
) -> PathPoint:
    gamma_hat = D.apply(u_hat)
    fused = np.all(gamma_hat.reshape(D.num_pairs, D.p) == 0, axis=1)
    partition = partition_from_components(D.n, [pair for pair, is_fused in zip(D.pairs(), fused) if is_fused])
    certificate = kkt_certificate(x, D, lambda_, norm, u_hat, dual_hint=nu_hat, refine_iter=refine_iter)
    residual = x - u_hat
    return PathPoint(
        lambda_=float(lambda_),
        u_hat=u_hat,
        gamma_hat=gamma_hat,
        partition=partition,
        rss=float(residual @ residual),
        iterations=iterations,
        kkt_residual=certificate.residual,
        converged=converged,
        certified=certificate.residual <= CERTIFICATION_TOLERANCE * data_scale(x),
        nu_hat=lambda_ * certificate.subgradient.reshape(-1),
        primal_residual=primal_residual,
        dual_residual=dual_residual,
        rho=rho,
    )


def solve_single(
    x: np.ndarray,
    D: DifferenceOperator,
    lambda_: float,
    norm: FusionNorm,
    settings: SolveSettings = SolveSettings(),
    warm_start: Optional[PathPoint] = None,
    initial_u: Optional[np.ndarray] = None,
) -> PathPoint:
    """
    Minimizes 1/2 ||x - u||^2 + lambda * sum_{i<i'} ||U_i - U_i'||_q by alternating directions on
    u and v = Du with scaled multipliers w; the v-update is the proximal map of the penalty.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (D.layout.size,):
        raise ValueError(f"x has length {x.size}, expected {D.layout.size}")
    if lambda_ < 0:
        raise ValueError(f"lambda must be non-negative, got {lambda_}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x contains non-finite values")

    if lambda_ == 0:
        return _finish_point(x, D, 0.0, norm, x.copy(), np.zeros(D.shape[0]), 0, True, 0.0, 0.0, settings.rho)

    scale = data_scale(x)
    rho = settings.rho
    if warm_start is not None:
        rho = warm_start.rho
        u = warm_start.u_hat.copy()
        v = warm_start.gamma_hat.copy() if warm_start.gamma_hat is not None else D.apply(u)
        w = warm_start.nu_hat / rho if warm_start.nu_hat is not None else np.zeros(D.shape[0])
    else:
        u = x.copy() if initial_u is None else np.asarray(initial_u, dtype=float).copy()
        v = D.apply(u)
        w = np.zeros(D.shape[0])

    primal_floor = np.sqrt(D.shape[0]) * scale
    dual_floor = np.sqrt(D.shape[1]) * scale
    converged = False
    primal_residual = dual_residual = float("inf")
    iteration = 0
    for iteration in range(1, settings.max_iter + 1):
        u = D.solve_normal(x + rho * D.apply_adjoint(v - w), rho)
        du = D.apply(u)
        v_previous = v
        v = prox_penalty((du + w).reshape(D.num_pairs, D.p), lambda_ / rho, norm).reshape(-1)
        w = w + du - v

        primal_residual = float(np.linalg.norm(du - v))
        dual_residual = float(rho * np.linalg.norm(D.apply_adjoint(v - v_previous)))
        primal_eps = settings.tol_primal * (primal_floor + max(np.linalg.norm(du), np.linalg.norm(v)))
        dual_eps = settings.tol_dual * (dual_floor + rho * np.linalg.norm(D.apply_adjoint(w)))
        if primal_residual <= primal_eps and dual_residual <= dual_eps:
            converged = True
            break

        if settings.adaptive_rho and iteration % settings.rho_update_interval == 0:
            if primal_residual > 10.0 * dual_residual:
                rho *= 2.0
                w /= 2.0
            elif dual_residual > 10.0 * primal_residual:
                rho /= 2.0
                w *= 2.0

    if not converged:
        logger.warning(
            "Solver did not converge at lambda=%g after %d iterations (primal %.3g, dual %.3g)",
            lambda_,
            iteration,
            primal_residual,
            dual_residual,
        )

    fused = _fused_mask(D, norm, v, D.apply(u), settings.fuse_tol * scale)
    u_hat = polish_centroids(D, norm, u, fused.reshape(D.num_pairs, D.p))
    return _finish_point(
        x,
        D,
        lambda_,
        norm,
        u_hat,
        rho * w,
        iteration,
        converged,
        primal_residual,
        dual_residual,
        rho,
        refine_iter=settings.kkt_refine_iter,
    )


def solve_path(
    x: np.ndarray,
    D: DifferenceOperator,
    norm: FusionNorm,
    grid: Sequence[float],
    settings: SolveSettings = SolveSettings(),
) -> PathSolution:
    """Solves along an increasing lambda grid, warm-starting each point from the previous one."""
    lambdas = [float(value) for value in grid]
    if not lambdas:
        raise ValueError("The lambda grid is empty")
    if lambdas[0] < 0 or any(later <= earlier for earlier, later in zip(lambdas, lambdas[1:])):
        raise ValueError("The lambda grid must be non-negative and strictly increasing")

    logger.info("Solving q=%d path with %d lambda values", norm.q, len(lambdas))
    points: list[PathPoint] = []
    previous: Optional[PathPoint] = None
    for lambda_ in lambdas:
        warm = previous if previous is not None and previous.lambda_ > 0 else None
        point = solve_single(x, D, lambda_, norm, settings, warm_start=warm)
        logger.debug(
            "lambda=%g: %d clusters, %d iterations, kkt %.3g", lambda_, point.k, point.iterations, point.kkt_residual
        )
        points.append(point)
        previous = point
    unconverged = sum(not point.converged for point in points)
    if unconverged:
        logger.warning("%d of %d path points did not converge", unconverged, len(points))
    return PathSolution(points=points, norm=norm, layout=D.layout)


def refine_path(
    path: PathSolution,
    x: np.ndarray,
    D: DifferenceOperator,
    settings: SolveSettings = SolveSettings(),
    budget: int = 200,
    min_gap: float = 1e-4,
) -> PathSolution:
    """
    Bisects every lambda interval whose end points differ by more than one cluster, so the path visits each
    cluster count it passes through. Intervals narrower than min_gap * their upper end are left alone, and at
    most `budget` extra points are solved. Each new point is warm-started from its left neighbour.
    """
    if budget < 0:
        raise ValueError(f"budget must be non-negative, got {budget}")
    points = list(path.points)
    added = 0
    index = 0
    while index < len(points) - 1 and added < budget:
        left, right = points[index], points[index + 1]
        if abs(left.k - right.k) <= 1 or right.lambda_ - left.lambda_ <= min_gap * right.lambda_:
            index += 1
            continue
        lambda_ = 0.5 * (left.lambda_ + right.lambda_)
        warm = left if left.lambda_ > 0 else None
        points.insert(index + 1, solve_single(x, D, lambda_, path.norm, settings, warm_start=warm))
        added += 1
    if added:
        logger.debug("Refined path with %d extra lambda values", added)
    if added == budget and index < len(points) - 1:
        logger.info("Path refinement stopped at its budget of %d points", budget)
    return PathSolution(points=points, norm=path.norm, layout=path.layout)


def default_grid(lambda_upper: float, count: int = 100, min_frac: float = 1e-3) -> list[float]:
    """lambda = 0 followed by `count` geometrically spaced values from min_frac * lambda_upper to lambda_upper."""
    if count < 1:
        raise ValueError(f"The grid needs at least one point, got count={count}")
    if not 0 < min_frac <= 1:
        raise ValueError(f"min_frac must lie in (0, 1], got {min_frac}")
    if lambda_upper <= 0:
        return [0.0]
    if count == 1:
        return [0.0, float(lambda_upper)]
    return [0.0] + [float(value) for value in np.geomspace(lambda_upper * min_frac, lambda_upper, count)]


def kmeans_penalty_value(partition: Partition, lambda_: float) -> float:
    """
    lambda * sum_{i<i'} sum_k 1(i in E_k, i' not in E_k). Each pair split across clusters is
    counted once (for the cluster of its smaller index), so two clusters give lambda |E_1| (n - |E_1|).
    """
    same = partition.same_cluster_matrix()
    upper = np.triu_indices(partition.n, k=1)
    return lambda_ * float(np.count_nonzero(~same[upper]))


def fusion_objective_l0(X: np.ndarray, partition: Partition, lambda_: float) -> float:
    """
    Non-convex clustering objective with an indicator penalty on unequal centroid rows:
    half the within-cluster sum of squares plus the between-cluster pair penalty.
    """
    X = np.asarray(X, dtype=float)
    centers = _group_means(X, partition)
    return 0.5 * float(np.sum((X - centers) ** 2)) + kmeans_penalty_value(partition, lambda_)

