import argparse
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from rich.logging import RichHandler

from config import (
    DEFAULT_FORMAT,
    DEFAULT_GAMMA_EBIC,
    DEFAULT_GRID_COUNT,
    DEFAULT_GRID_MIN_FRAC,
    DEFAULT_Q,
    DEFAULT_REPS,
    DEFAULT_SEED,
    DEFAULT_THREADS,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    FUSEPATH_MAX_ITER,
    FUSEPATH_THREADS,
)
from error import UsageError, error_exit, error_message
from fusepathlib.datamatrix import DataMatrix, read_matrix, write_matrix
from fusepathlib.diffop import DifferenceOperator, FusionNorm, SizeGuardError
from fusepathlib.dof import df1_unique_count, path_degrees_of_freedom
from fusepathlib.lambdarange import lambda_upper, loose_upper_bound
from fusepathlib.modelselect import ebic
from fusepathlib.results import ResultTable, write_sidecar, write_table
from fusepathlib.simlab import (
    EXPERIMENTS,
    REFINE_BUDGET,
    TABLE1_GAMMAS,
    ExperimentSettings,
    GaussianClusterSpec,
    Shape,
    ShapeClusterSpec,
    create_experiment,
    gen_gaussian,
    gen_shape,
)
from fusepathlib.solver import PathSolution, SolveSettings, default_grid, solve_path
from load_fusepath_env import load_fusepath_env

logger = logging.getLogger("fusepath")

GENERATORS = ["gaussian"] + [shape.value for shape in Shape]


class FusepathArgumentParser(argparse.ArgumentParser):
    """Reports usage errors with the input-error exit code, keeping 2 for numerical warnings."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


@dataclass(frozen=True)
class RunConfig:
    """Validated command-line configuration. Built before any computation starts."""

    command: str
    input: Optional[Path]
    q: int
    grid_count: int
    grid_min_frac: float
    lambdas: Optional[tuple[float, ...]]
    gamma_ebic: Optional[float]
    seed: int
    reps: int
    out: Optional[Path]
    format: str
    verbose: bool
    threads: int
    max_iter: Optional[int]
    experiment: Optional[str] = None
    shape: Optional[str] = None
    generator: str = "gaussian"
    clusters: Optional[int] = None
    n: int = 20
    p: int = 20
    sigma: Optional[float] = None
    multiplier: float = 1.0
    refine_budget: int = REFINE_BUDGET

    @property
    def norm(self) -> FusionNorm:
        return FusionNorm.from_q(self.q)

    @property
    def ebic_weight(self) -> float:
        return DEFAULT_GAMMA_EBIC if self.gamma_ebic is None else self.gamma_ebic

    def solve_settings(self) -> SolveSettings:
        settings = SolveSettings()
        if self.max_iter is not None:
            settings = replace(settings, max_iter=self.max_iter)
        return settings

    def echo(self) -> dict:
        return {
            "command": self.command,
            "input": str(self.input) if self.input else None,
            "q": self.q,
            "grid_count": self.grid_count,
            "grid_min_frac": self.grid_min_frac,
            "lambdas": list(self.lambdas) if self.lambdas is not None else None,
            "gamma_ebic": self.gamma_ebic,
            "seed": self.seed,
            "reps": self.reps,
            "format": self.format,
            "max_iter": self.solve_settings().max_iter,
            "experiment": self.experiment,
            "shape": self.shape,
            "generator": self.generator,
            "clusters": self.clusters,
            "sigma": self.sigma,
            "multiplier": self.multiplier,
            "refine_budget": self.refine_budget,
        }


def _env_int(name: str, default: Optional[int]) -> Optional[int]:
    value = os.getenv(name)
    if value is None or value.strip() == "":
        return default
    try:
        parsed = int(value)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {value!r}") from None
    if parsed < 1:
        raise UsageError(f"{name} must be positive, got {parsed}")
    return parsed


def _parse_lambdas(text: Optional[str]) -> Optional[tuple[float, ...]]:
    if text is None:
        return None
    cells = [cell.strip() for cell in text.split(",") if cell.strip()]
    if not cells:
        raise UsageError("--lambdas is empty")
    try:
        return tuple(float(cell) for cell in cells)
    except ValueError:
        raise UsageError(f"--lambdas must be a comma-separated list of numbers, got {text!r}") from None


def build_config(args: argparse.Namespace) -> RunConfig:
    if args.command in ("fit-path", "lambda-max", "dof", "select-ebic") and args.input is None:
        raise UsageError(f"{args.command} needs --input")
    if args.grid_count < 1:
        raise UsageError(f"--grid-count must be positive, got {args.grid_count}")
    if not 0 < args.grid_min_frac <= 1:
        raise UsageError(f"--grid-min-frac must lie in (0, 1], got {args.grid_min_frac}")
    if args.gamma_ebic is not None and not 0 <= args.gamma_ebic <= 1:
        raise UsageError(f"--gamma-ebic must lie in [0, 1], got {args.gamma_ebic}")
    if args.reps < 1:
        raise UsageError(f"--reps must be positive, got {args.reps}")
    if args.command == "simulate" and args.out is None:
        raise UsageError("simulate needs --out")
    if getattr(args, "sigma", None) is not None and args.sigma < 0:
        raise UsageError(f"--sigma must be non-negative, got {args.sigma}")
    if getattr(args, "multiplier", 1.0) < 1:
        raise UsageError(f"--multiplier must be at least 1, got {args.multiplier}")
    if getattr(args, "refine_budget", 0) < 0:
        raise UsageError(f"--refine-budget must be non-negative, got {args.refine_budget}")
    return RunConfig(
        command=args.command,
        input=Path(args.input) if args.input else None,
        q=args.q,
        grid_count=args.grid_count,
        grid_min_frac=args.grid_min_frac,
        lambdas=_parse_lambdas(args.lambdas),
        gamma_ebic=args.gamma_ebic,
        seed=args.seed,
        reps=args.reps,
        out=Path(args.out) if args.out else None,
        format=args.format,
        verbose=args.verbose,
        threads=_env_int(FUSEPATH_THREADS, DEFAULT_THREADS) or DEFAULT_THREADS,
        max_iter=_env_int(FUSEPATH_MAX_ITER, None),
        experiment=getattr(args, "name", None),
        shape=getattr(args, "shape", None),
        generator=getattr(args, "generator", "gaussian"),
        clusters=getattr(args, "clusters", None),
        n=getattr(args, "n", 20),
        p=getattr(args, "p", 20),
        sigma=getattr(args, "sigma", None),
        multiplier=getattr(args, "multiplier", 1.0),
        refine_budget=getattr(args, "refine_budget", REFINE_BUDGET),
    )


def emit(table: ResultTable, config: RunConfig):
    if config.out is None:
        sys.stdout.write(table.render(config.format))
        return
    path = write_table(table, config.out, config.format)
    write_sidecar(path, config.echo(), outputs=[path])


def _fit(config: RunConfig) -> tuple[DataMatrix, DifferenceOperator, PathSolution]:
    assert config.input is not None
    data = read_matrix(config.input)
    D = DifferenceOperator.for_shape(data.n, data.p)
    if config.lambdas is not None:
        grid = list(config.lambdas)
    else:
        upper = lambda_upper(data.x, D, config.norm)
        grid = default_grid(upper.lambda_upper, count=config.grid_count, min_frac=config.grid_min_frac)
    path = solve_path(data.x, D, config.norm, grid, config.solve_settings())
    try:
        path = path_degrees_of_freedom(path, D)
    except SizeGuardError as error:
        logger.warning("Degrees of freedom not computed: %s", error)
    return data, D, path


def _status(path: PathSolution) -> int:
    if not path.all_converged:
        logger.warning("Some path points did not converge; results were written anyway")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit_path(config: RunConfig) -> int:
    _, _, path = _fit(config)
    table = ResultTable(
        "path", ["lambda", "k", "labels", "rss", "df", "kkt_residual", "converged", "certified", "iterations"]
    )
    for point in path.points:
        table.add_row(
            **{"lambda": point.lambda_},
            k=point.k,
            labels=list(point.partition.labels),
            rss=point.rss,
            df=point.df,
            kkt_residual=point.kkt_residual,
            converged=point.converged,
            certified=point.certified,
            iterations=point.iterations,
        )
    emit(table, config)
    return _status(path)


def cmd_lambda_max(config: RunConfig) -> int:
    assert config.input is not None
    data = read_matrix(config.input)
    D = DifferenceOperator.for_shape(data.n, data.p)
    result = lambda_upper(data.x, D, config.norm)
    table = ResultTable(
        "lambda_max", ["lambda_upper", "loose_bound", "lower_bound", "status", "certified", "iterations"]
    )
    table.add_row(
        lambda_upper=result.lambda_upper,
        loose_bound=loose_upper_bound(data.x, D, config.norm),
        lower_bound=result.lower_bound,
        status=result.status.value,
        certified=result.certified,
        iterations=result.iterations,
    )
    emit(table, config)
    return EXIT_OK if result.certified else EXIT_NUMERICAL


def cmd_dof(config: RunConfig) -> int:
    _, _, path = _fit(config)
    columns = ["lambda", "k", "df"] + (["df_unique"] if config.norm is FusionNorm.L1 else [])
    table = ResultTable("dof", columns)
    for point in path.points:
        row = {"lambda": point.lambda_, "k": point.k, "df": point.df}
        if config.norm is FusionNorm.L1:
            row["df_unique"] = df1_unique_count(point)
        table.add_row(**row)
    emit(table, config)
    return _status(path)


def cmd_select_ebic(config: RunConfig) -> int:
    _, _, path = _fit(config)
    curve = ebic(path, config.ebic_weight)
    table = ResultTable("ebic", ["lambda", "k", "rss", "df", "ebic", "selected"])
    for index, entry in enumerate(curve.entries):
        table.add_row(
            **{"lambda": entry.lambda_},
            k=entry.k,
            rss=entry.rss,
            df=entry.df,
            ebic=entry.ebic,
            selected=index == curve.argmin,
        )
    chosen = curve.entries[curve.argmin]
    logger.info("Selected lambda=%g with %d clusters", chosen.lambda_, chosen.k)
    emit(table, config)
    return _status(path)


def cmd_experiment(config: RunConfig) -> int:
    settings = ExperimentSettings(
        reps=config.reps,
        seed=config.seed,
        q=config.q,
        grid_count=config.grid_count,
        gammas=TABLE1_GAMMAS if config.gamma_ebic is None else (config.gamma_ebic,),
        shape=Shape(config.shape) if config.shape else None,
        clusters=config.clusters,
        sigma=config.sigma,
        multiplier=config.multiplier,
        refine_budget=config.refine_budget,
        threads=config.threads,
        verbose=config.verbose,
        solve=config.solve_settings(),
    )
    experiment = create_experiment(config.experiment or "", settings)
    failures = 0
    for table in experiment.run():
        failures += table.failures
        if config.out is None:
            sys.stdout.write(table.render(config.format))
            continue
        path = write_table(table, config.out, config.format)
        write_sidecar(path, {**config.echo(), **experiment.config()}, outputs=[path])
    if failures:
        logger.warning("%d replicates failed or did not converge; results were written anyway", failures)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_simulate(config: RunConfig) -> int:
    if config.generator == "gaussian":
        sigma = 0.5 if config.sigma is None else config.sigma
        data = gen_gaussian(
            GaussianClusterSpec(K=config.clusters or 2, n=config.n, p=config.p, sigma=sigma, seed=config.seed)
        )
    else:
        data = gen_shape(ShapeClusterSpec(shape=Shape(config.generator), seed=config.seed))
    assert config.out is not None
    path = write_matrix(config.out, data.X, labels=data.truth.labels)
    write_sidecar(path, config.echo(), outputs=[path])
    return EXIT_OK


HANDLERS = {
    "fit-path": cmd_fit_path,
    "lambda-max": cmd_lambda_max,
    "dof": cmd_dof,
    "select-ebic": cmd_select_ebic,
    "experiment": cmd_experiment,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = FusepathArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV file with n rows and p numeric columns, optional header row")
    common.add_argument("--q", type=int, choices=[1, 2], default=DEFAULT_Q, help="Fusion penalty norm")
    common.add_argument("--grid-count", type=int, default=DEFAULT_GRID_COUNT, help="Number of positive lambdas")
    common.add_argument(
        "--grid-min-frac",
        type=float,
        default=DEFAULT_GRID_MIN_FRAC,
        help="Smallest positive lambda as a fraction of lambda_upper",
    )
    common.add_argument("--lambdas", help="Explicit comma-separated increasing lambda grid, overrides --grid-*")
    common.add_argument(
        "--gamma-ebic",
        type=float,
        help=f"Extended BIC weight in [0, 1]; select-ebic defaults to {DEFAULT_GAMMA_EBIC}, table1 to all of "
        + ", ".join(str(gamma) for gamma in TABLE1_GAMMAS),
    )
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Master random seed")
    common.add_argument("--reps", type=int, default=DEFAULT_REPS, help="Replicates for experiments")
    common.add_argument("--out", help="Output file; standard output when omitted")
    common.add_argument("--format", choices=["csv", "json"], default=DEFAULT_FORMAT, help="Output format")
    common.add_argument("--verbose", "-v", action="store_true", help="Verbose output")

    gaussian = FusepathArgumentParser(add_help=False)
    gaussian.add_argument("--clusters", type=int, choices=[2, 3], help="Gaussian cluster count (default 2)")
    gaussian.add_argument("--sigma", type=float, help="Gaussian noise standard deviation")

    parser = FusepathArgumentParser(
        prog="fusepath",
        description="Convex clustering paths, lambda range, degrees of freedom, eBIC selection and simulations.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("fit-path", parents=[common], help="Solve the clustering path over a lambda grid")
    subparsers.add_parser("lambda-max", parents=[common], help="Smallest lambda giving a single cluster")
    subparsers.add_parser("dof", parents=[common], help="Degrees of freedom along the path")
    subparsers.add_parser("select-ebic", parents=[common], help="Extended BIC curve and selected lambda")
    experiment = subparsers.add_parser("experiment", parents=[common, gaussian], help="Run a canned simulation study")
    experiment.add_argument("name", choices=sorted(EXPERIMENTS), help="Experiment to run")
    experiment.add_argument(
        "--shape", choices=[shape.value for shape in Shape], help="Non-convex data for rand-curves"
    )
    experiment.add_argument(
        "--multiplier", type=float, default=1.0, help="Factor (>= 1) on the smallest lambda' for pred-bound"
    )
    experiment.add_argument(
        "--refine-budget",
        type=int,
        default=REFINE_BUDGET,
        help="Extra lambdas bisected into each path where the cluster count jumps by more than one",
    )
    simulate = subparsers.add_parser(
        "simulate", parents=[common, gaussian], help="Write a simulated data set with labels"
    )
    simulate.add_argument("--generator", choices=GENERATORS, default="gaussian", help="Data generator")
    simulate.add_argument("--n", type=int, default=20, help="Gaussian observation count")
    simulate.add_argument("--p", type=int, default=20, help="Gaussian feature count")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        logging.basicConfig(format="%(message)s", datefmt="[%X]", handlers=[RichHandler(rich_tracebacks=True)])
        logger.setLevel(logging.DEBUG)

    load_fusepath_env()

    try:
        config = build_config(args)
        return HANDLERS[config.command](config)
    except Exception as error:
        sys.stderr.write(error_message(error).rstrip("\n") + "\n")
        return error_exit(error, args.command)


if __name__ == "__main__":
    sys.exit(main())
