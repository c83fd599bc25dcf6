import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial.distance import pdist

from fusepathlib.diffop import (
    DifferenceOperator,
    DimensionMismatchError,
    FusionNorm,
    SizeGuardError,
    VecLayout,
    data_scale,
    pairwise_distances,
)


def test_apply_two_points(two_point):
    x, D = two_point
    assert_allclose(D.apply(x), [2.0])


def test_apply_three_points_in_pair_order(three_point):
    x, D = three_point
    assert D.pairs() == [(0, 1), (0, 2), (1, 2)]
    assert_allclose(D.apply(x), [-1.0, -5.0, -4.0])


def test_apply_constant_rows_is_zero():
    D = DifferenceOperator.for_shape(5, 3)
    u = np.tile([1.5, -2.0, 7.0], 5)
    assert not np.any(D.apply(u))


def test_apply_blocks_hold_row_differences(rng):
    U = rng.standard_normal((4, 3))
    D = DifferenceOperator.for_shape(4, 3)
    blocks = D.apply_blocks(U.reshape(-1))
    for k, (i, j) in enumerate(D.pairs()):
        assert_allclose(blocks[k], U[i] - U[j])


def test_apply_is_linear(rng):
    D = DifferenceOperator.for_shape(6, 2)
    u, v = rng.standard_normal(12), rng.standard_normal(12)
    assert_allclose(D.apply(u + 3.0 * v), D.apply(u) + 3.0 * D.apply(v), atol=1e-12)


def test_apply_adjoint_two_points():
    D = DifferenceOperator.for_shape(2, 1)
    assert_allclose(D.apply_adjoint(np.array([1.0])), [1.0, -1.0])
    assert not np.any(D.apply_adjoint(np.zeros(1)))


@pytest.mark.parametrize("n,p", [(2, 1), (3, 2), (7, 3)])
def test_apply_adjoint_matches_inner_products(rng, n, p):
    D = DifferenceOperator.for_shape(n, p)
    u = rng.standard_normal(n * p)
    v = rng.standard_normal(D.shape[0])
    assert D.apply(u) @ v == pytest.approx(u @ D.apply_adjoint(v), rel=1e-10, abs=1e-10)


def test_adjoint_agrees_with_dense_transpose(rng):
    D = DifferenceOperator.for_shape(4, 2)
    v = rng.standard_normal(D.shape[0])
    assert_allclose(D.apply_adjoint(v), D.to_dense().T @ v, atol=1e-12)


def test_pseudo_inverse_centres_rows(rng):
    U = rng.standard_normal((5, 3))
    D = DifferenceOperator.for_shape(5, 3)
    recovered = D.apply_pseudo_inverse(D.apply(U.reshape(-1)))
    assert_allclose(recovered, (U - U.mean(axis=0)).reshape(-1), atol=1e-10)


def test_project_column_space_keeps_range(rng):
    D = DifferenceOperator.for_shape(5, 2)
    v = D.apply(rng.standard_normal(10))
    assert_allclose(D.project_column_space(v), v, atol=1e-10)


def test_project_column_space_is_idempotent(rng):
    D = DifferenceOperator.for_shape(6, 2)
    v = rng.standard_normal(D.shape[0])
    once = D.project_column_space(v)
    assert_allclose(D.project_column_space(once), once, atol=1e-10)


def test_project_column_space_two_points_is_identity():
    D = DifferenceOperator.for_shape(2, 1)
    assert_allclose(D.project_column_space(np.array([-3.5])), [-3.5])


def test_solve_normal_inverts_regularized_gram(rng):
    D = DifferenceOperator.for_shape(5, 3)
    b = rng.standard_normal(15)
    rho = 2.5
    u = D.solve_normal(b, rho)
    assert_allclose(u + rho * D.apply_adjoint(D.apply(u)), b, atol=1e-12)


@pytest.mark.parametrize("n,p,rank", [(3, 1, 2), (2, 2, 2), (5, 3, 12)])
def test_spectrum_check_examples(n, p, rank):
    report = DifferenceOperator.for_shape(n, p).spectrum_check()
    assert report.rank == rank
    assert report.min_singular_value == pytest.approx(math.sqrt(n), abs=1e-8)
    assert report.max_singular_value == pytest.approx(math.sqrt(n), abs=1e-8)


def test_spectrum_check_all_small_shapes():
    for n in range(2, 9):
        for p in range(1, 4):
            report = DifferenceOperator.for_shape(n, p).spectrum_check()
            assert report.rank == p * (n - 1)
            assert report.min_singular_value == pytest.approx(math.sqrt(n), abs=1e-8)
            assert report.max_singular_value == pytest.approx(math.sqrt(n), abs=1e-8)


def test_spectrum_check_size_guard():
    with pytest.raises(SizeGuardError, match="matrix-free"):
        DifferenceOperator.for_shape(4, 2).spectrum_check(max_columns=5)


def test_dimension_mismatch_names_lengths():
    D = DifferenceOperator.for_shape(3, 2)
    with pytest.raises(DimensionMismatchError) as error:
        D.apply(np.zeros(5))
    assert error.value.expected == 6
    assert error.value.actual == 5
    with pytest.raises(DimensionMismatchError):
        D.apply_adjoint(np.zeros(5))
    with pytest.raises(DimensionMismatchError):
        D.project_column_space(np.zeros(2))


def test_pair_index_matches_pair_order():
    D = DifferenceOperator.for_shape(6, 1)
    for k, (i, j) in enumerate(D.pairs()):
        assert D.pair_index(i, j) == k
    with pytest.raises(ValueError):
        D.pair_index(3, 3)


def test_vec_layout_is_row_major():
    layout = VecLayout(3, 4)
    assert sorted(layout.index(i, j) for i in range(3) for j in range(4)) == list(range(12))
    matrix = np.arange(12.0).reshape(3, 4)
    assert layout.vec(matrix)[layout.index(2, 1)] == matrix[2, 1]
    assert_allclose(layout.unvec(layout.vec(matrix)), matrix)
    with pytest.raises(ValueError):
        VecLayout(0, 2)


def test_fusion_norm_dual_exponents():
    assert FusionNorm.from_q(1).dual_exponent == float("inf")
    assert FusionNorm.from_q(2).dual_exponent == 2.0
    with pytest.raises(ValueError):
        FusionNorm.from_q(3)


@pytest.mark.parametrize("order,metric", [(2.0, "euclidean"), (float("inf"), "chebyshev"), (1, "cityblock")])
def test_pairwise_distances_match_scipy(rng, order, metric):
    X = rng.standard_normal((7, 3))
    assert_allclose(pairwise_distances(X, order), pdist(X, metric), rtol=1e-12)


def test_data_scale():
    assert data_scale(np.array([-4.0, 2.0])) == 4.0
    assert data_scale(np.zeros(3)) == 1.0


@pytest.mark.parametrize("n,p", [(2, 1), (4, 2), (6, 3)])
def test_pseudo_inverse_is_transpose_over_n(n, p):
    D = DifferenceOperator.for_shape(n, p)
    dense = D.to_dense()
    pinv = dense.T / n
    assert_allclose(dense @ pinv @ dense, dense, atol=1e-8)
    assert_allclose(pinv @ dense @ pinv, pinv, atol=1e-8)
    assert_allclose((dense @ pinv).T, dense @ pinv, atol=1e-8)
    assert_allclose((pinv @ dense).T, pinv @ dense, atol=1e-8)
