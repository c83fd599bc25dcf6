import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .diffop import DifferenceOperator, FusionNorm, block_norms, data_scale
from .solver import SolveSettings, solve_single

logger = logging.getLogger("fusepath")


class LambdaUpperStatus(Enum):
    OPTIMAL = "optimal"
    CONSTANT_ROWS = "constant_rows"
    SUBGRADIENT_FALLBACK = "subgradient_fallback"
    UNCERTIFIED = "uncertified"


@dataclass(frozen=True)
class LambdaUpperSettings:
    """
    Attributes:
        tol (float): Relative duality gap at which the splitting method stops
        max_iter (int): Douglas-Rachford iteration cap
        step (float): Splitting step, as a multiple of the loose bound
        subgradient_iter (int): Iterations of the projected-subgradient fallback
    """

    tol: float = 1e-4
    max_iter: int = 20000
    step: float = 1.0
    subgradient_iter: int = 20000

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1 or self.subgradient_iter < 0:
            raise ValueError("Iteration limits must be positive")
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")


@dataclass(frozen=True)
class LambdaUpperResult:
    """
    Smallest lambda at which all observations fuse into one cluster.

    Attributes:
        lambda_upper (float): Best objective value found, never above the loose bound
        omega_star (np.ndarray): Minimizer, length p * n(n-1)/2
        loose_bound (float): Objective at omega = 0
        iterations (int): Iterations spent
        certified (bool): Whether the duality gap closed to the requested tolerance
        status (LambdaUpperStatus): How the result was obtained
        lower_bound (float): Dual lower bound on the exact value
    """

    lambda_upper: float
    omega_star: np.ndarray = field(repr=False)
    loose_bound: float
    iterations: int
    certified: bool
    status: LambdaUpperStatus
    lower_bound: float = 0.0


@dataclass(frozen=True)
class BisectionReport:
    candidate: float
    lower_lambda: float
    upper_lambda: float
    lower_clusters: int
    upper_clusters: int
    conclusive: bool

    @property
    def passed(self) -> bool:
        return self.conclusive and self.lower_clusters >= 2 and self.upper_clusters == 1

    @property
    def failure(self) -> str:
        if not self.conclusive:
            return "inconclusive"
        if self.lower_clusters < 2:
            return "lower solve fused"
        if self.upper_clusters != 1:
            return "upper solve not fused"
        return ""


def project_l1_ball(v: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Euclidean projection onto {w : ||w||_1 <= radius} by sorting magnitudes."""
    v = np.asarray(v, dtype=float)
    magnitudes = np.abs(v)
    if magnitudes.sum() <= radius:
        return v.copy()
    ordered = np.sort(magnitudes)[::-1]
    cumulative = np.cumsum(ordered)
    ranks = np.arange(1, ordered.size + 1)
    last = np.flatnonzero(ordered * ranks > cumulative - radius)[-1]
    threshold = (cumulative[last] - radius) / (last + 1)
    return np.sign(v) * np.maximum(magnitudes - threshold, 0.0)


def project_group_l1_ball(blocks: np.ndarray, radius: float = 1.0) -> np.ndarray:
    """Projection onto {W : sum of row l2 norms <= radius}: project the row norms, then rescale rows."""
    norms = block_norms(blocks, 2)
    target = project_l1_ball(norms, radius)
    scale = np.zeros_like(norms)
    positive = norms > 0
    scale[positive] = target[positive] / norms[positive]
    return blocks * scale[:, None]


def _dual_norm(blocks: np.ndarray, norm: FusionNorm) -> float:
    return float(np.max(block_norms(blocks, norm.dual_exponent))) if blocks.size else 0.0


def _primal_norm(blocks: np.ndarray, norm: FusionNorm) -> float:
    return float(np.sum(block_norms(blocks, norm.q)))


def _project_primal_ball(blocks: np.ndarray, norm: FusionNorm) -> np.ndarray:
    if norm is FusionNorm.L1:
        return project_l1_ball(blocks.reshape(-1)).reshape(blocks.shape)
    return project_group_l1_ball(blocks)


def _prox_dual_norm(blocks: np.ndarray, step: float, norm: FusionNorm) -> tuple[np.ndarray, np.ndarray]:
    """Moreau decomposition: prox of step * P* is v - step * proj_B(v / step). Also returns proj_B(v / step)."""
    subgradient = _project_primal_ball(blocks / step, norm)
    return blocks - step * subgradient, subgradient


def loose_upper_bound(x: np.ndarray, D: DifferenceOperator, norm: FusionNorm) -> float:
    """Dual norm of Dx / n: the objective with omega = 0."""
    return _dual_norm(D.apply_blocks(x) / D.n, norm)


def lambda_upper_objective(x: np.ndarray, D: DifferenceOperator, norm: FusionNorm, omega: np.ndarray) -> float:
    """P*(a + Q omega) with a = Dx / n and Q the projection onto the complement of range(D)."""
    a = D.apply(x) / D.n
    omega = np.asarray(omega, dtype=float)
    t = a + omega - D.project_column_space(omega)
    return _dual_norm(t.reshape(D.num_pairs, D.p), norm)


def _gap_lower_bound(a: np.ndarray, D: DifferenceOperator, norm: FusionNorm, subgradient: np.ndarray) -> float:
    # any g in range(D) scaled into the unit primal ball is dual feasible, and <g, a> bounds the minimum
    g = D.project_column_space(subgradient.reshape(-1))
    size = _primal_norm(g.reshape(D.num_pairs, D.p), norm)
    if size <= 0:
        return 0.0
    return abs(float(g @ a)) / size


def _subgradient_fallback(
    a: np.ndarray, D: DifferenceOperator, norm: FusionNorm, start: np.ndarray, iterations: int
) -> tuple[np.ndarray, float, float]:
    best_t, best = start.copy(), _dual_norm(start.reshape(D.num_pairs, D.p), norm)
    lower = 0.0
    t = start.copy()
    initial_step = max(best, 1e-300)
    for k in range(iterations):
        blocks = t.reshape(D.num_pairs, D.p)
        subgradient = np.zeros_like(blocks)
        if norm is FusionNorm.L1:
            index = np.unravel_index(int(np.argmax(np.abs(blocks))), blocks.shape)
            subgradient[index] = np.sign(blocks[index])
        else:
            norms = block_norms(blocks, 2)
            row = int(np.argmax(norms))
            if norms[row] > 0:
                subgradient[row] = blocks[row] / norms[row]
        lower = max(lower, _gap_lower_bound(a, D, norm, subgradient))
        direction = subgradient.reshape(-1) - D.project_column_space(subgradient.reshape(-1))
        length = float(np.linalg.norm(direction))
        if length == 0:
            break
        t = t - (initial_step / np.sqrt(k + 1.0)) * direction / length
        value = _dual_norm(t.reshape(D.num_pairs, D.p), norm)
        if value < best:
            best, best_t = value, t.copy()
    return best_t, best, lower


def lambda_upper(
    x: np.ndarray,
    D: DifferenceOperator,
    norm: FusionNorm,
    settings: LambdaUpperSettings = LambdaUpperSettings(),
) -> LambdaUpperResult:
    """
    Minimizes P*(t) over the affine set {t : D^T t = D^T a}, a = Dx / n, by Douglas-Rachford splitting.
    The dual-norm proximal map comes from projecting onto the unit ball of the penalty norm, and the
    iteration stops once the best feasible value is within `tol` of a dual lower bound.
    """
    x = np.asarray(x, dtype=float)
    loose = loose_upper_bound(x, D, norm)
    if loose <= 1e-14 * data_scale(x):
        logger.info("All observations coincide; lambda_upper is zero")
        return LambdaUpperResult(
            lambda_upper=0.0,
            omega_star=np.zeros(D.shape[0]),
            loose_bound=0.0,
            iterations=0,
            certified=True,
            status=LambdaUpperStatus.CONSTANT_ROWS,
        )

    a = D.apply(x) / D.n

    def project_affine(z: np.ndarray) -> np.ndarray:
        return z - D.project_column_space(z - a)

    step = settings.step * loose
    z = a.copy()
    best_t, best = a.copy(), loose
    lower = 0.0
    iteration = 0
    certified = False
    for iteration in range(1, settings.max_iter + 1):
        t = project_affine(z)
        value = _dual_norm(t.reshape(D.num_pairs, D.p), norm)
        if value < best:
            best, best_t = value, t
        reflected = (2.0 * t - z).reshape(D.num_pairs, D.p)
        y, subgradient = _prox_dual_norm(reflected, step, norm)
        lower = max(lower, _gap_lower_bound(a, D, norm, subgradient))
        z = z + y.reshape(-1) - t
        if best - lower <= settings.tol * best:
            certified = True
            break

    status = LambdaUpperStatus.OPTIMAL
    if not certified:
        logger.warning(
            "Splitting stalled for lambda_upper after %d iterations (gap %.3g); trying projected subgradient",
            iteration,
            best - lower,
        )
        fallback_t, fallback, fallback_lower = _subgradient_fallback(a, D, norm, best_t, settings.subgradient_iter)
        iteration += settings.subgradient_iter
        lower = max(lower, fallback_lower)
        if fallback < best:
            best, best_t = fallback, fallback_t
        certified = best - lower <= settings.tol * best
        status = LambdaUpperStatus.SUBGRADIENT_FALLBACK if certified else LambdaUpperStatus.UNCERTIFIED

    logger.info("lambda_upper=%g (loose bound %g, lower bound %g, %d iterations)", best, loose, lower, iteration)
    return LambdaUpperResult(
        lambda_upper=float(best),
        omega_star=best_t - a,
        loose_bound=float(loose),
        iterations=iteration,
        certified=certified,
        status=status,
        lower_bound=float(min(lower, best)),
    )


def bisection_validate(
    x: np.ndarray,
    D: DifferenceOperator,
    norm: FusionNorm,
    candidate: float,
    delta: float = 0.02,
    settings: SolveSettings = SolveSettings(),
) -> BisectionReport:
    """
    Solves at candidate * (1 - delta) and candidate * (1 + delta); the candidate passes when the lower solve
    keeps at least two clusters and the upper solve fuses everything.
    """
    if candidate <= 0:
        raise ValueError(f"candidate must be positive, got {candidate}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    lower_lambda = candidate * (1.0 - delta)
    upper_lambda = candidate * (1.0 + delta)
    lower = solve_single(x, D, lower_lambda, norm, settings)
    upper = solve_single(x, D, upper_lambda, norm, settings)
    report = BisectionReport(
        candidate=float(candidate),
        lower_lambda=lower_lambda,
        upper_lambda=upper_lambda,
        lower_clusters=lower.k,
        upper_clusters=upper.k,
        conclusive=lower.converged and upper.converged,
    )
    if not report.passed:
        logger.info("Bisection check of lambda=%g failed: %s", candidate, report.failure)
    return report
