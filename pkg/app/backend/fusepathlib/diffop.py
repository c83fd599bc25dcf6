import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

logger = logging.getLogger("fusepath")

# Dense SVD of D is only attempted below this many columns (np)
SPECTRUM_MAX_COLUMNS = 5000


class DimensionMismatchError(ValueError):
    def __init__(self, what: str, expected: int, actual: int):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} has length {actual}, expected {expected}")


class SizeGuardError(ValueError):
    pass


class FusionNorm(Enum):
    """
    The two fusion penalties. The value is q; `dual_exponent` is s with 1/s + 1/q = 1.
    """

    L1 = 1
    L2 = 2

    @property
    def q(self) -> int:
        return self.value

    @property
    def dual_exponent(self) -> float:
        return float("inf") if self is FusionNorm.L1 else 2.0

    @classmethod
    def from_q(cls, q: int) -> "FusionNorm":
        for norm in cls:
            if norm.value == q:
                return norm
        raise ValueError(f"Unsupported fusion norm q={q}, expected 1 or 2")


def block_norms(blocks: np.ndarray, order: float) -> np.ndarray:
    """Row-wise norms of an (m, p) array of difference blocks. order is 1, 2 or inf."""
    if order == float("inf"):
        return np.max(np.abs(blocks), axis=1) if blocks.shape[1] else np.zeros(blocks.shape[0])
    if order == 1:
        return np.sum(np.abs(blocks), axis=1)
    return np.sqrt(np.sum(blocks * blocks, axis=1))


@dataclass(frozen=True)
class VecLayout:
    """
    Row-major vectorization of an n x p matrix: entry (i, j) lives at i * p + j (0-based).
    """

    n: int
    p: int

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError(f"Layout needs positive dimensions, got n={self.n}, p={self.p}")

    @property
    def size(self) -> int:
        return self.n * self.p

    def index(self, i: int, j: int) -> int:
        return i * self.p + j

    def vec(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (self.n, self.p):
            raise DimensionMismatchError("matrix", self.size, matrix.size)
        return matrix.reshape(-1).copy()

    def unvec(self, vector: np.ndarray) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.size,):
            raise DimensionMismatchError("vector", self.size, vector.size)
        return vector.reshape(self.n, self.p)


@dataclass(frozen=True)
class SpectrumReport:
    rank: int
    min_singular_value: float
    max_singular_value: float


@dataclass(frozen=True)
class DifferenceOperator:
    """
    Matrix-free pairwise difference operator. Row block k (p rows) belongs to the pair
    (left[k], right[k]) with left < right, pairs in lexicographic order, and holds U[left] - U[right].
    """

    layout: VecLayout
    left: np.ndarray = field(init=False, repr=False, compare=False)
    right: np.ndarray = field(init=False, repr=False, compare=False)
    incidence: sparse.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        left, right = np.triu_indices(self.layout.n, k=1)
        left.setflags(write=False)
        right.setflags(write=False)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        # one row per pair: +1 at the left observation, -1 at the right one
        pairs = np.arange(left.size)
        signs = np.concatenate([np.ones(left.size), -np.ones(left.size)])
        incidence = sparse.csr_matrix(
            (signs, (np.tile(pairs, 2), np.concatenate([left, right]))),
            shape=(left.size, self.layout.n),
        )
        object.__setattr__(self, "incidence", incidence)

    @classmethod
    def for_shape(cls, n: int, p: int) -> "DifferenceOperator":
        return cls(VecLayout(n, p))

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def p(self) -> int:
        return self.layout.p

    @property
    def num_pairs(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_pairs * self.p, self.layout.size)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.left.tolist(), self.right.tolist()))

    def pair_index(self, i: int, j: int) -> int:
        """Block number of the pair (i, j), i < j, 0-based."""
        if not 0 <= i < j < self.n:
            raise ValueError(f"Invalid pair ({i}, {j}) for n={self.n}")
        return i * self.n - i * (i + 1) // 2 + (j - i - 1)

    def _check(self, vector: np.ndarray, expected: int, what: str) -> np.ndarray:
        vector = np.asarray(vector, dtype=float)
        if vector.ndim != 1 or vector.shape[0] != expected:
            raise DimensionMismatchError(what, expected, vector.size)
        return vector

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = self._check(u, self.shape[1], "u")
        matrix = u.reshape(self.n, self.p)
        return (matrix[self.left] - matrix[self.right]).reshape(-1)

    def apply_blocks(self, u: np.ndarray) -> np.ndarray:
        """Du reshaped to (num_pairs, p)."""
        return self.apply(u).reshape(self.num_pairs, self.p)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        v = self._check(v, self.shape[0], "v")
        blocks = v.reshape(self.num_pairs, self.p)
        return np.asarray(self.incidence.T @ blocks).reshape(-1)

    def apply_pseudo_inverse(self, v: np.ndarray) -> np.ndarray:
        return self.apply_adjoint(v) / self.n

    def project_column_space(self, v: np.ndarray) -> np.ndarray:
        """(1/n) D D^T v, the orthogonal projection onto range(D)."""
        return self.apply(self.apply_adjoint(v)) / self.n

    def solve_normal(self, b: np.ndarray, rho: float) -> np.ndarray:
        """
        Solves (I + rho D^T D) u = b in O(np). D^T D acts on each feature column as n*I - 11^T,
        so column sums are preserved and u = (b + rho * 1 colsum(b)) / (1 + rho * n).
        """
        b = self._check(b, self.shape[1], "b")
        matrix = b.reshape(self.n, self.p)
        solved = (matrix + rho * matrix.sum(axis=0, keepdims=True)) / (1.0 + rho * self.n)
        return solved.reshape(-1)

    def to_dense(self, max_columns: int = SPECTRUM_MAX_COLUMNS) -> np.ndarray:
        rows, cols = self.shape
        if cols > max_columns:
            raise SizeGuardError(
                f"Dense difference operator with {cols} columns exceeds the limit of {max_columns}; "
                "use the matrix-free apply/apply_adjoint checks instead"
            )
        dense = np.zeros((rows, cols))
        eye = np.eye(self.p)
        for k, (i, j) in enumerate(self.pairs()):
            block = slice(k * self.p, (k + 1) * self.p)
            dense[block, i * self.p : (i + 1) * self.p] = eye
            dense[block, j * self.p : (j + 1) * self.p] = -eye
        return dense

    def spectrum_check(self, max_columns: int = SPECTRUM_MAX_COLUMNS) -> SpectrumReport:
        dense = self.to_dense(max_columns=max_columns)
        singular_values = np.linalg.svd(dense, compute_uv=False)
        if singular_values.size == 0 or singular_values[0] == 0:
            return SpectrumReport(rank=0, min_singular_value=0.0, max_singular_value=0.0)
        cutoff = 1e-10 * singular_values[0]
        nonzero = singular_values[singular_values > cutoff]
        logger.debug("Spectrum of D for n=%d, p=%d: rank %d", self.n, self.p, nonzero.size)
        return SpectrumReport(
            rank=int(nonzero.size),
            min_singular_value=float(nonzero.min()),
            max_singular_value=float(nonzero.max()),
        )


def data_scale(x: np.ndarray) -> float:
    """Magnitude used to make tolerances relative to the input."""
    scale = float(np.max(np.abs(x))) if np.size(x) else 0.0
    return scale if scale > 0 else 1.0


def pairwise_distances(matrix: np.ndarray, order: float) -> np.ndarray:
    """
    Condensed distances between rows, in the same pair order and with the same arithmetic as
    the difference operator, so thresholding and linkage agree bit for bit.
    """
    matrix = np.asarray(matrix, dtype=float)
    operator = DifferenceOperator.for_shape(*matrix.shape)
    return block_norms(operator.apply_blocks(matrix.reshape(-1)), order)
