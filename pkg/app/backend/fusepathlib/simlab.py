"""
Simulated data sets and the experiment runners built on them. Every runner returns tidy ResultTables and
draws replicate r from the generator seeded with (seed, r), so tables do not depend on thread count.
"""

import logging
import math
from abc import ABC
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from .baselines import Linkage, cut_k, hierarchical, kmeans
from .diffop import DifferenceOperator, FusionNorm, block_norms
from .dof import path_degrees_of_freedom
from .lambdarange import lambda_upper
from .modelselect import ModelSelectionError, select_lambda
from .partitions import Partition, rand_index
from .replicates import run_replicates
from .results import ResultTable
from .solver import PathSolution, SolveSettings, default_grid, refine_path, solve_path, solve_single

logger = logging.getLogger("fusepath")

# Positive lambdas on each path grid before refinement
DEFAULT_GRID_COUNT = 100
# Extra lambdas a path may gain while bisecting jumps in the cluster count
REFINE_BUDGET = 200


class ExperimentError(ValueError):
    pass


class Shape(Enum):
    TWO_CIRCLES = "two_circles"
    TWO_HALF_MOONS = "two_half_moons"


class Method(Enum):
    CONVEX_L1 = "convex-q1"
    CONVEX_L2 = "convex-q2"
    SINGLE = "single"
    AVERAGE = "average"
    KMEANS = "kmeans"


@dataclass(frozen=True)
class GaussianClusterSpec:
    """
    Observations assigned uniformly at random to K clusters and drawn from N(mu_k, sigma^2 I).
    Default means are +1 and -1 for K=2 and -3, 0, 3 for K=3 (constant across features).
    """

    K: int = 2
    n: int = 20
    p: int = 20
    sigma: float = 0.5
    means: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.p < 1:
            raise ExperimentError(f"Need n >= 2 and p >= 1, got n={self.n}, p={self.p}")
        if self.sigma < 0:
            raise ExperimentError(f"sigma must be non-negative, got {self.sigma}")
        if self.means is None and self.K not in (2, 3):
            raise ExperimentError(f"Default means exist for K=2 or K=3 only, got K={self.K}")
        if self.means is not None and np.shape(self.means) != (self.K, self.p):
            raise ExperimentError(f"means must be {self.K} x {self.p}, got {np.shape(self.means)}")

    def cluster_means(self) -> np.ndarray:
        if self.means is not None:
            return np.asarray(self.means, dtype=float)
        levels = [1.0, -1.0] if self.K == 2 else [-3.0, 0.0, 3.0]
        return np.repeat(np.asarray(levels)[:, None], self.p, axis=1)


@dataclass(frozen=True)
class ShapeClusterSpec:
    """
    Two non-convex clusters in the plane. Circles: radii 2 and 10 about the origin, noise sd 0.1.
    Half-moons: radius 30, upper half about (0, 0) and lower half about (30, 3), noise sd 1.
    """

    shape: Shape = Shape.TWO_CIRCLES
    points_per_cluster: int = 50
    noise_sd: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.points_per_cluster < 1:
            raise ExperimentError(f"points_per_cluster must be positive, got {self.points_per_cluster}")
        if self.noise_sd is not None and self.noise_sd < 0:
            raise ExperimentError(f"noise_sd must be non-negative, got {self.noise_sd}")

    @property
    def noise(self) -> float:
        if self.noise_sd is not None:
            return self.noise_sd
        return 0.1 if self.shape is Shape.TWO_CIRCLES else 1.0


ClusterSpec = Union[GaussianClusterSpec, ShapeClusterSpec]


@dataclass(frozen=True)
class SimulatedData:
    X: np.ndarray = field(repr=False)
    truth: Partition
    centroids: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def u_true(self) -> np.ndarray:
        """n x p matrix of true centroids; only known for Gaussian data."""
        if self.centroids is None:
            raise ExperimentError("True centroids are only known for Gaussian clusters")
        return self.centroids


def _rng(seed: int, replicate: Optional[int]) -> np.random.Generator:
    return np.random.default_rng([seed] if replicate is None else [seed, replicate])


def gen_gaussian(spec: GaussianClusterSpec, replicate: Optional[int] = None) -> SimulatedData:
    rng = _rng(spec.seed, replicate)
    means = spec.cluster_means()
    labels = rng.integers(spec.K, size=spec.n)
    noise = rng.standard_normal((spec.n, spec.p))
    centroids = means[labels]
    return SimulatedData(X=centroids + spec.sigma * noise, truth=Partition.from_labels(labels), centroids=centroids)


def gen_shape(spec: ShapeClusterSpec, replicate: Optional[int] = None) -> SimulatedData:
    rng = _rng(spec.seed, replicate)
    m = spec.points_per_cluster
    if spec.shape is Shape.TWO_CIRCLES:
        arcs = [((0.0, 0.0), 2.0, 0.0, 2.0 * math.pi), ((0.0, 0.0), 10.0, 0.0, 2.0 * math.pi)]
    else:
        arcs = [((0.0, 0.0), 30.0, 0.0, math.pi), ((30.0, 3.0), 30.0, math.pi, 2.0 * math.pi)]
    pieces = []
    for center, radius, start, stop in arcs:
        angles = rng.uniform(start, stop, size=m)
        points = np.column_stack([np.cos(angles), np.sin(angles)]) * radius + np.asarray(center)
        pieces.append(points)
    X = np.vstack(pieces) + spec.noise * rng.standard_normal((2 * m, 2))
    return SimulatedData(X=X, truth=Partition.from_labels([0] * m + [1] * m))


def generate(spec: ClusterSpec, replicate: Optional[int] = None) -> SimulatedData:
    if isinstance(spec, GaussianClusterSpec):
        return gen_gaussian(spec, replicate)
    return gen_shape(spec, replicate)


def _path_for(
    X: np.ndarray, norm: FusionNorm, grid_count: int, settings: SolveSettings, refine_budget: int = REFINE_BUDGET
) -> PathSolution:
    """Default grid up to lambda_upper, bisected wherever the cluster count jumps by more than one."""
    D = DifferenceOperator.for_shape(*X.shape)
    x = X.reshape(-1)
    grid = default_grid(lambda_upper(x, D, norm).lambda_upper, count=grid_count)
    path = solve_path(x, D, norm, grid, settings)
    return refine_path(path, x, D, settings, budget=refine_budget)


def _rand_by_cluster_count(
    data: SimulatedData, method: Method, grid_count: int, settings: SolveSettings, seed: int, refine_budget: int
) -> tuple[dict[int, float], bool]:
    """Rand index against the truth for every cluster count the method produces, and whether every solve converged."""
    X, n = data.X, data.X.shape[0]
    scores: dict[int, float] = {}
    if method in (Method.CONVEX_L1, Method.CONVEX_L2):
        norm = FusionNorm.L1 if method is Method.CONVEX_L1 else FusionNorm.L2
        path = _path_for(X, norm, grid_count, settings, refine_budget)
        for point in path.points:
            # first (smallest) lambda reaching each count
            scores.setdefault(point.k, rand_index(point.partition, data.truth))
        return scores, path.all_converged
    if method is Method.KMEANS:
        for k in range(1, n + 1):
            scores[k] = rand_index(kmeans(X, k, seed=seed).partition, data.truth)
        return scores, True
    dendrogram = hierarchical(X, Linkage.SINGLE if method is Method.SINGLE else Linkage.AVERAGE)
    for k in range(1, n + 1):
        scores[k] = rand_index(cut_k(dendrogram, k), data.truth)
    return scores, True


def run_rand_curves(
    spec: ClusterSpec,
    methods: Sequence[Method],
    reps: int,
    seed: int = 0,
    grid_count: int = DEFAULT_GRID_COUNT,
    settings: SolveSettings = SolveSettings(),
    threads: int = 1,
    verbose: bool = False,
    refine_budget: int = REFINE_BUDGET,
) -> ResultTable:
    """Mean Rand index against the truth per (method, number of clusters), averaged over the replicates producing it."""
    if reps < 1:
        raise ExperimentError(f"reps must be positive, got {reps}")
    spec = replace(spec, seed=seed)

    def replicate(rep: int) -> tuple[dict[Method, dict[int, float]], int]:
        data = generate(spec, rep)
        curves: dict[Method, dict[int, float]] = {}
        failures = 0
        for method in methods:
            try:
                curves[method], converged = _rand_by_cluster_count(
                    data, method, grid_count, settings, seed=seed + rep, refine_budget=refine_budget
                )
                failures += not converged
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as error:
                logger.warning("Replicate %d failed for %s: %s", rep, method.value, error)
                curves[method] = {}
                failures += 1
        return curves, failures

    outcomes = run_replicates(replicate, reps, threads, description="Rand curves", show_progress=verbose)
    table = ResultTable("rand_curves", ["method", "k", "mean_rand", "n_reps"])
    table.failures = sum(failures for _, failures in outcomes)
    curves = [curve for curve, _ in outcomes]
    for method in methods:
        counts = sorted({k for curve in curves for k in curve[method]})
        for k in counts:
            # accumulated in replicate order for bitwise reproducibility
            values = [curve[method][k] for curve in curves if k in curve[method]]
            table.add_row(method=method.value, k=k, mean_rand=math.fsum(values) / len(values), n_reps=len(values))
    return table


@dataclass(frozen=True)
class BoundReport:
    """
    Per-replicate check of the prediction error bound (1/2np)||u_hat - u||^2 <= rhs.

    Attributes:
        norm (FusionNorm): Penalty used
        lambda_prime (float): lambda / (np)
        rhs (float): (3 lambda'/2) * penalty(Du) + sigma^2 [1/n + sqrt(log(np) / (n^2 p))]
        lhs (list[float]): Average squared prediction error per replicate
        holds (list[bool]): Whether the bound held per replicate
        unconverged (int): Replicates whose solve hit the iteration cap
    """

    norm: FusionNorm
    lambda_prime: float
    rhs: float
    lhs: list[float]
    holds: list[bool]
    unconverged: int = 0

    @property
    def hold_fraction(self) -> float:
        return sum(self.holds) / len(self.holds) if self.holds else 0.0

    def to_table(self) -> ResultTable:
        columns = ["rep", "lambda_prime", "lhs", "rhs", "holds"]
        table = ResultTable("prediction_bound", columns, failures=self.unconverged)
        for rep, (lhs, holds) in enumerate(zip(self.lhs, self.holds)):
            table.add_row(rep=rep, lambda_prime=self.lambda_prime, lhs=lhs, rhs=self.rhs, holds=holds)
        return table


def bound_lambda_prime(n: int, p: int, sigma: float, norm: FusionNorm) -> float:
    """Smallest lambda' for which the prediction error bound is stated."""
    pairs = p * n * (n - 1) / 2
    denominator = n**3 * p**2 if norm is FusionNorm.L1 else n**3 * p
    return 4.0 * sigma * math.sqrt(math.log(pairs) / denominator) if pairs > 1 else 0.0


def prediction_bound_rhs(u_true: np.ndarray, sigma: float, norm: FusionNorm, lambda_prime: float) -> float:
    u_true = np.asarray(u_true, dtype=float)
    n, p = u_true.shape
    D = DifferenceOperator.for_shape(n, p)
    penalty = float(np.sum(block_norms(D.apply_blocks(u_true.reshape(-1)), norm.q)))
    return 1.5 * lambda_prime * penalty + sigma**2 * (1.0 / n + math.sqrt(math.log(n * p) / (n * n * p)))


def check_prediction_bound(
    u_true: np.ndarray,
    sigma: float,
    norm: FusionNorm,
    reps: int,
    lambda_prime_multiplier: float = 1.0,
    seed: int = 0,
    settings: SolveSettings = SolveSettings(),
    threads: int = 1,
    verbose: bool = False,
) -> BoundReport:
    if lambda_prime_multiplier < 1:
        raise ExperimentError(f"The multiplier must be at least 1, got {lambda_prime_multiplier}")
    if reps < 1:
        raise ExperimentError(f"reps must be positive, got {reps}")
    u_true = np.asarray(u_true, dtype=float)
    n, p = u_true.shape
    D = DifferenceOperator.for_shape(n, p)
    lambda_prime = lambda_prime_multiplier * bound_lambda_prime(n, p, sigma, norm)
    rhs = prediction_bound_rhs(u_true, sigma, norm, lambda_prime)

    def replicate(rep: int) -> tuple[float, bool]:
        rng = np.random.default_rng([seed, rep])
        x = u_true.reshape(-1) + sigma * rng.standard_normal(n * p)
        point = solve_single(x, D, lambda_prime * n * p, norm, settings)
        error = point.u_hat - u_true.reshape(-1)
        return float(error @ error) / (2.0 * n * p), point.converged

    outcomes = run_replicates(replicate, reps, threads, description="Prediction bound", show_progress=verbose)
    lhs = [value for value, _ in outcomes]
    holds = [value <= rhs for value in lhs]
    logger.info("Prediction bound held in %d of %d replicates", sum(holds), reps)
    unconverged = sum(not converged for _, converged in outcomes)
    return BoundReport(norm=norm, lambda_prime=lambda_prime, rhs=rhs, lhs=lhs, holds=holds, unconverged=unconverged)


DOF_FIGURE_COLUMNS = ["lambda", "df_hat", "df_hat_sd", "df_lower", "df_upper", "mc_mean", "mc_sd", "mc_se", "n_reps"]


def run_dof_figure(
    spec: GaussianClusterSpec,
    norm: FusionNorm,
    reps: int = 500,
    seed: int = 0,
    grid_count: int = 20,
    settings: SolveSettings = SolveSettings(),
    threads: int = 1,
    verbose: bool = False,
) -> ResultTable:
    """
    Compares the unbiased estimator with the covariance (Monte Carlo) degrees of freedom along a lambda grid.
    The centroids are fixed from one draw of `spec`; each replicate adds fresh noise. The grid runs from 0 to
    twice lambda_upper of a pilot data set, and df_lower/df_upper is the mean estimate +/- 2 sd.
    """
    if reps < 2:
        raise ExperimentError(f"At least two replicates are needed, got {reps}")
    if spec.sigma <= 0:
        raise ExperimentError("The degrees-of-freedom comparison needs sigma > 0")
    spec = replace(spec, seed=seed)
    u_true = gen_gaussian(spec).u_true
    n, p = u_true.shape
    D = DifferenceOperator.for_shape(n, p)
    pilot = u_true.reshape(-1) + spec.sigma * np.random.default_rng([seed, reps]).standard_normal(n * p)
    grid = default_grid(2.0 * lambda_upper(pilot, D, norm).lambda_upper, count=grid_count)

    def replicate(rep: int) -> tuple[np.ndarray, np.ndarray, bool]:
        noise = spec.sigma * np.random.default_rng([seed, rep]).standard_normal(n * p)
        x = u_true.reshape(-1) + noise
        path = path_degrees_of_freedom(solve_path(x, D, norm, grid, settings), D)
        covariance = np.asarray([float((point.u_hat - u_true.reshape(-1)) @ noise) for point in path.points])
        estimates = np.asarray([point.df for point in path.points], dtype=float)
        return covariance / spec.sigma**2, estimates, path.all_converged

    outcomes = run_replicates(replicate, reps, threads, description="Degrees of freedom", show_progress=verbose)
    covariance = np.vstack([outcome[0] for outcome in outcomes])
    estimates = np.vstack([outcome[1] for outcome in outcomes])
    table = ResultTable("dof_figure", DOF_FIGURE_COLUMNS, failures=sum(not outcome[2] for outcome in outcomes))
    for index, lambda_ in enumerate(grid):
        df_mean, df_sd = float(estimates[:, index].mean()), float(estimates[:, index].std(ddof=1))
        mc_mean, mc_sd = float(covariance[:, index].mean()), float(covariance[:, index].std(ddof=1))
        table.add_row(
            **{"lambda": lambda_},
            df_hat=df_mean,
            df_hat_sd=df_sd,
            df_lower=df_mean - 2.0 * df_sd,
            df_upper=df_mean + 2.0 * df_sd,
            mc_mean=mc_mean,
            mc_sd=mc_sd,
            mc_se=mc_sd / math.sqrt(reps),
            n_reps=reps,
        )
    return table


TABLE1_GAMMAS = (0.0, 0.5, 0.75, 1.0)


def run_table1(
    reps: int,
    gammas: Sequence[float] = TABLE1_GAMMAS,
    seed: int = 0,
    grid_count: int = DEFAULT_GRID_COUNT,
    settings: SolveSettings = SolveSettings(),
    threads: int = 1,
    verbose: bool = False,
    sigma: float = 0.5,
    refine_budget: int = REFINE_BUDGET,
) -> ResultTable:
    """
    eBIC selection with q=2 on Gaussian clusters (K = 2 and 3, n = p = 20, sigma = 0.5 by default): the share
    of replicates selecting the true K and the mean Rand index of the selected partition. A replicate whose
    path did not converge, or for which a gamma selects nothing, counts as a failure.
    """
    if reps < 1:
        raise ExperimentError(f"reps must be positive, got {reps}")
    if not gammas:
        raise ExperimentError("At least one eBIC gamma is needed")
    table = ResultTable("table1", ["setting", "k_true", "gamma", "proportion_correct", "mean_rand", "n_reps"])
    for K in (2, 3):
        spec = GaussianClusterSpec(K=K, n=20, p=20, sigma=sigma, seed=seed)

        def replicate(rep: int) -> tuple[list[tuple[bool, float]], bool]:
            data = gen_gaussian(spec, rep)
            D = DifferenceOperator.for_shape(*data.X.shape)
            try:
                path = path_degrees_of_freedom(_path_for(data.X, FusionNorm.L2, grid_count, settings, refine_budget), D)
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as error:
                logger.warning("Replicate %d failed: %s", rep, error)
                return [(False, 0.0)] * len(gammas), False
            selections = []
            ok = path.all_converged
            for gamma in gammas:
                try:
                    chosen = select_lambda(path, gamma)
                except ModelSelectionError as error:
                    logger.warning("Replicate %d: no eBIC selection for gamma=%g: %s", rep, gamma, error)
                    selections.append((False, 0.0))
                    ok = False
                    continue
                selections.append((chosen.k == data.truth.k, rand_index(chosen.partition, data.truth)))
            return selections, ok

        outcomes = run_replicates(replicate, reps, threads, description=f"eBIC selection, K={K}", show_progress=verbose)
        table.failures += sum(not ok for _, ok in outcomes)
        for index, gamma in enumerate(gammas):
            correct = [selections[index][0] for selections, _ in outcomes]
            rands = [selections[index][1] for selections, _ in outcomes]
            table.add_row(
                setting=f"gaussian-k{K}",
                k_true=K,
                gamma=float(gamma),
                proportion_correct=sum(correct) / reps,
                mean_rand=math.fsum(rands) / reps,
                n_reps=reps,
            )
    return table


@dataclass(frozen=True)
class ExperimentSettings:
    """
    Attributes:
        reps (int): Replicates per setting
        seed (int): Master seed; replicate r uses (seed, r)
        q (int): Fusion norm for single-norm experiments
        grid_count (int): Number of positive lambda values on each path grid
        gammas (tuple[float, ...]): eBIC weights for the selection table
        shape (Optional[Shape]): Non-convex data for the Rand curves; Gaussian clusters when unset
        clusters (Optional[int]): Number of Gaussian clusters (2 or 3); each experiment's own default when unset
        sigma (Optional[float]): Noise level of the Gaussian data; each experiment's own default when unset
        multiplier (float): Factor (>= 1) on the smallest lambda' of the prediction bound
        refine_budget (int): Extra lambdas each selection or Rand path may gain by bisection
        threads (int): Worker threads for replicates
        verbose (bool): Show progress bars
    """

    reps: int = 10
    seed: int = 0
    q: int = 2
    grid_count: int = DEFAULT_GRID_COUNT
    gammas: tuple[float, ...] = TABLE1_GAMMAS
    shape: Optional[Shape] = None
    clusters: Optional[int] = None
    sigma: Optional[float] = None
    multiplier: float = 1.0
    refine_budget: int = REFINE_BUDGET
    threads: int = 1
    verbose: bool = False
    solve: SolveSettings = field(default_factory=SolveSettings)

    def gaussian_spec(self, n: int, p: int, sigma: float) -> GaussianClusterSpec:
        """Gaussian data of the given size; `clusters` and `sigma` override the experiment's defaults when set."""
        return GaussianClusterSpec(
            K=self.clusters or 2, n=n, p=p, sigma=sigma if self.sigma is None else self.sigma, seed=self.seed
        )


class Experiment(ABC):
    """
    A canned simulation study. `run` returns its result tables; `config` echoes everything needed to rerun it.
    """

    name: str = ""

    def __init__(self, settings: ExperimentSettings):
        self.settings = settings

    def config(self) -> dict:
        settings = self.settings
        return {
            "experiment": self.name,
            "reps": settings.reps,
            "seed": settings.seed,
            "q": settings.q,
            "grid_count": settings.grid_count,
            "refine_budget": settings.refine_budget,
            "gammas": list(settings.gammas),
            "shape": settings.shape.value if settings.shape else None,
            "clusters": settings.clusters,
            "sigma": settings.sigma,
            "multiplier": settings.multiplier,
            "angle_sampling": "uniform",
        }

    def run(self) -> list[ResultTable]:
        raise NotImplementedError


class DofFigureExperiment(Experiment):
    name = "dof-figure"

    def run(self) -> list[ResultTable]:
        s = self.settings
        table = run_dof_figure(
            s.gaussian_spec(n=20, p=20, sigma=0.5),
            FusionNorm.from_q(s.q),
            reps=s.reps,
            seed=s.seed,
            grid_count=s.grid_count,
            settings=s.solve,
            threads=s.threads,
            verbose=s.verbose,
        )
        return [table]


class RandCurvesExperiment(Experiment):
    name = "rand-curves"

    def run(self) -> list[ResultTable]:
        s = self.settings
        spec: ClusterSpec = s.gaussian_spec(n=30, p=30, sigma=1.0)
        if s.shape is not None:
            spec = ShapeClusterSpec(shape=s.shape)
        table = run_rand_curves(
            spec,
            list(Method),
            reps=s.reps,
            seed=s.seed,
            grid_count=s.grid_count,
            settings=s.solve,
            threads=s.threads,
            verbose=s.verbose,
            refine_budget=s.refine_budget,
        )
        return [table]


class Table1Experiment(Experiment):
    name = "table1"

    def run(self) -> list[ResultTable]:
        s = self.settings
        if s.clusters is not None:
            logger.info("The selection table always runs K=2 and K=3; ignoring clusters=%d", s.clusters)
        table = run_table1(
            s.reps,
            s.gammas,
            seed=s.seed,
            grid_count=s.grid_count,
            settings=s.solve,
            threads=s.threads,
            verbose=s.verbose,
            sigma=0.5 if s.sigma is None else s.sigma,
            refine_budget=s.refine_budget,
        )
        return [table]


class PredictionBoundExperiment(Experiment):
    name = "pred-bound"

    def run(self) -> list[ResultTable]:
        s = self.settings
        spec = s.gaussian_spec(n=20, p=20, sigma=0.5)
        report = check_prediction_bound(
            gen_gaussian(spec).u_true,
            spec.sigma,
            FusionNorm.from_q(s.q),
            s.reps,
            lambda_prime_multiplier=s.multiplier,
            seed=s.seed,
            settings=s.solve,
            threads=s.threads,
            verbose=s.verbose,
        )
        return [report.to_table()]


EXPERIMENTS: dict[str, type[Experiment]] = {
    experiment.name: experiment
    for experiment in (DofFigureExperiment, RandCurvesExperiment, Table1Experiment, PredictionBoundExperiment)
}


def create_experiment(name: str, settings: ExperimentSettings) -> Experiment:
    try:
        return EXPERIMENTS[name](settings)
    except KeyError:
        raise ExperimentError(f"Unknown experiment {name!r}; choose one of {', '.join(sorted(EXPERIMENTS))}") from None
