import logging
import math
from dataclasses import dataclass

from .partitions import Partition
from .solver import PathSolution

logger = logging.getLogger("fusepath")


class ModelSelectionError(ValueError):
    pass


@dataclass(frozen=True)
class EbicEntry:
    lambda_: float
    rss: float
    df: float
    ebic: float
    k: int


@dataclass(frozen=True)
class EbicCurve:
    """
    Extended BIC along a path: np log(rss / np) + df log(np) + 2 gamma df log(np), natural logs.
    Path points with rss <= 0 are left out and listed in `excluded`.
    """

    gamma_ebic: float
    entries: list[EbicEntry]
    excluded: list[float]
    argmin: int


@dataclass(frozen=True)
class Selection:
    lambda_star: float
    partition: Partition
    k: int
    ebic: float


def ebic_value(rss: float, df: float, size: int, gamma_ebic: float) -> float:
    log_size = math.log(size)
    return size * math.log(rss / size) + df * log_size + 2.0 * gamma_ebic * df * log_size


def ebic(path: PathSolution, gamma_ebic: float) -> EbicCurve:
    if not 0 <= gamma_ebic <= 1:
        raise ModelSelectionError(f"gamma_ebic must lie in [0, 1], got {gamma_ebic}")
    size = path.layout.size
    entries: list[EbicEntry] = []
    excluded: list[float] = []
    for point in path.points:
        if point.df is None:
            raise ModelSelectionError(f"Path point at lambda={point.lambda_} has no degrees of freedom")
        if point.rss <= 0:
            excluded.append(point.lambda_)
            continue
        value = ebic_value(point.rss, point.df, size, gamma_ebic)
        entries.append(EbicEntry(point.lambda_, point.rss, point.df, value, point.k))
    if excluded:
        logger.info("Excluded %d path points with zero residual sum of squares from eBIC", len(excluded))
    if not entries:
        raise ModelSelectionError("No path point has a positive residual sum of squares")

    # ties go to the larger lambda
    order = sorted(range(len(entries)), key=lambda index: entries[index].lambda_)
    best = order[0]
    for index in order[1:]:
        if entries[index].ebic <= entries[best].ebic:
            best = index
    return EbicCurve(gamma_ebic=gamma_ebic, entries=entries, excluded=excluded, argmin=best)


def select_lambda(path: PathSolution, gamma_ebic: float) -> Selection:
    curve = ebic(path, gamma_ebic)
    chosen = curve.entries[curve.argmin]
    point = next(point for point in path.points if point.lambda_ == chosen.lambda_)
    logger.info("eBIC (gamma=%g) selects lambda=%g with %d clusters", gamma_ebic, chosen.lambda_, point.k)
    return Selection(lambda_star=chosen.lambda_, partition=point.partition, k=point.k, ebic=chosen.ebic)
