from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fusepathlib.diffop import DifferenceOperator, FusionNorm
from fusepathlib.lambdarange import loose_upper_bound
from fusepathlib.partitions import Partition
from fusepathlib.solver import (
    SolveSettings,
    cluster_extract,
    default_grid,
    fusion_objective_l0,
    kkt_check,
    kmeans_penalty_value,
    objective_value,
    penalty_value,
    prox_penalty,
    refine_path,
    solve_path,
    solve_single,
)

from .mocks import make_point, random_matrix


@pytest.mark.parametrize("norm", list(FusionNorm))
def test_solve_two_points_below_fusion(two_point, norm):
    x, D = two_point
    point = solve_single(x, D, 0.5, norm)
    assert point.converged
    assert point.k == 2
    assert_allclose(point.u_hat, [2.5, 1.5], atol=1e-6)
    assert point.rss == pytest.approx(0.5, abs=1e-5)


@pytest.mark.parametrize("norm", list(FusionNorm))
def test_solve_two_points_fused(two_point, norm):
    x, D = two_point
    point = solve_single(x, D, 1.5, norm)
    assert point.k == 1
    assert_allclose(point.u_hat, [2.0, 2.0], atol=1e-12)
    assert_allclose(point.gamma_hat, [0.0])
    assert point.certified


def test_solve_at_zero_returns_data(three_point):
    x, D = three_point
    point = solve_single(x, D, 0.0, FusionNorm.L2)
    assert_allclose(point.u_hat, x)
    assert point.rss == 0.0
    assert point.k == 3
    assert point.kkt_residual == 0.0


@pytest.mark.parametrize("norm", list(FusionNorm))
def test_solve_above_loose_bound_gives_column_means(norm):
    X = random_matrix(6, 2, seed=3)
    D = DifferenceOperator.for_shape(6, 2)
    lambda_ = 1.05 * loose_upper_bound(X.reshape(-1), D, norm)
    point = solve_single(X.reshape(-1), D, lambda_, norm)
    assert point.k == 1
    assert_allclose(point.u_hat.reshape(6, 2), np.tile(X.mean(axis=0), (6, 1)), atol=1e-10)
    assert point.certified


@pytest.mark.parametrize("norm", list(FusionNorm))
def test_solution_has_small_kkt_residual(norm):
    X = random_matrix(5, 2, seed=11)
    D = DifferenceOperator.for_shape(5, 2)
    x = X.reshape(-1)
    point = solve_single(x, D, 0.3, norm)
    assert point.converged
    assert point.kkt_residual <= 1e-4
    assert kkt_check(x, D, 0.3, norm, point.u_hat, dual_hint=point.nu_hat) <= 1e-4


def test_solution_beats_perturbations():
    X = random_matrix(5, 2, seed=5)
    D = DifferenceOperator.for_shape(5, 2)
    x = X.reshape(-1)
    point = solve_single(x, D, 0.4, FusionNorm.L2)
    best = objective_value(x, D, 0.4, FusionNorm.L2, point.u_hat)
    rng = np.random.default_rng(0)
    for _ in range(20):
        other = point.u_hat + 1e-3 * rng.standard_normal(x.size)
        assert objective_value(x, D, 0.4, FusionNorm.L2, other) >= best - 1e-9


def test_far_from_optimal_fails_kkt(three_point):
    x, D = three_point
    assert kkt_check(x, D, 0.5, FusionNorm.L1, np.zeros(3)) > 1e-3


def test_column_means_certified_at_large_lambda():
    X = random_matrix(4, 3, seed=8)
    D = DifferenceOperator.for_shape(4, 3)
    x = X.reshape(-1)
    means = np.tile(X.mean(axis=0), 4)
    lambda_ = loose_upper_bound(x, D, FusionNorm.L2)
    assert kkt_check(x, D, lambda_, FusionNorm.L2, means) <= 1e-6 * np.max(np.abs(x))


def test_warm_and_cold_starts_agree():
    X = random_matrix(6, 2, seed=2)
    D = DifferenceOperator.for_shape(6, 2)
    x = X.reshape(-1)
    path = solve_path(x, D, FusionNorm.L2, [0.0, 0.1, 0.2, 0.4])
    cold = solve_single(x, D, 0.4, FusionNorm.L2)
    assert_allclose(path.points[-1].u_hat, cold.u_hat, atol=1e-5)


def test_norms_agree_for_one_feature(rng):
    x = rng.standard_normal(6)
    D = DifferenceOperator.for_shape(6, 1)
    l1 = solve_single(x, D, 0.2, FusionNorm.L1)
    l2 = solve_single(x, D, 0.2, FusionNorm.L2)
    assert_allclose(l1.u_hat, l2.u_hat, atol=1e-6)


def test_path_cluster_counts_two_points(two_point):
    x, D = two_point
    path = solve_path(x, D, FusionNorm.L1, [0.0, 0.5, 1.5])
    assert path.cluster_counts == [2, 2, 1]
    assert path.lambdas == [0.0, 0.5, 1.5]
    assert path.all_converged


def test_path_one_feature_never_splits(rng):
    x = rng.standard_normal(8)
    D = DifferenceOperator.for_shape(8, 1)
    grid = default_grid(1.1 * loose_upper_bound(x, D, FusionNorm.L1), count=15)
    counts = solve_path(x, D, FusionNorm.L1, grid).cluster_counts
    assert counts[0] == 8
    assert counts[-1] == 1
    assert all(later <= earlier for earlier, later in zip(counts, counts[1:]))


def test_path_partition_matches_gamma_zeros():
    X = random_matrix(6, 2, seed=4)
    D = DifferenceOperator.for_shape(6, 2)
    path = solve_path(X.reshape(-1), D, FusionNorm.L2, [0.0, 0.2, 0.5, 1.0])
    for point in path.points:
        assert cluster_extract(point) == point.partition


@pytest.mark.parametrize("grid", [[], [0.5, 0.2], [0.1, 0.1], [-1.0, 0.5]])
def test_path_rejects_bad_grids(two_point, grid):
    x, D = two_point
    with pytest.raises(ValueError):
        solve_path(x, D, FusionNorm.L2, grid)


def test_solve_rejects_bad_input(two_point):
    x, D = two_point
    with pytest.raises(ValueError, match="non-negative"):
        solve_single(x, D, -1.0, FusionNorm.L2)
    with pytest.raises(ValueError, match="non-finite"):
        solve_single(np.array([1.0, np.nan]), D, 1.0, FusionNorm.L2)
    with pytest.raises(ValueError, match="expected 2"):
        solve_single(np.zeros(3), D, 1.0, FusionNorm.L2)


def test_unconverged_solve_is_flagged(caplog):
    X = random_matrix(6, 2, seed=9)
    D = DifferenceOperator.for_shape(6, 2)
    with caplog.at_level("WARNING", logger="fusepath"):
        point = solve_single(X.reshape(-1), D, 0.3, FusionNorm.L2, SolveSettings(max_iter=2))
    assert not point.converged
    assert point.iterations == 2
    assert "did not converge" in caplog.text


def test_settings_validation():
    with pytest.raises(ValueError):
        SolveSettings(rho=0.0)
    with pytest.raises(ValueError):
        SolveSettings(max_iter=0)
    with pytest.raises(ValueError):
        SolveSettings(fuse_tol=-1.0)


def test_prox_penalty_zeroes_small_blocks():
    blocks = np.array([[3.0, 4.0], [0.3, 0.4], [2.0, -0.5]])
    l2 = prox_penalty(blocks, 1.0, FusionNorm.L2)
    assert_allclose(l2[0], [2.4, 3.2])
    assert not np.any(l2[1])
    l1 = prox_penalty(blocks, 1.0, FusionNorm.L1)
    assert_allclose(l1, [[2.0, 3.0], [0.0, 0.0], [1.0, 0.0]])


def test_penalty_value_three_points(three_point):
    x, D = three_point
    assert penalty_value(D, FusionNorm.L1, x) == 10.0


def test_cluster_extract_without_gamma_uses_tolerance():
    point = make_point(np.array([1.0, 1.0 + 1e-12, 4.0]), 3)
    point = replace(point, gamma_hat=None)
    assert cluster_extract(point) == Partition.from_labels([0, 0, 1])


def test_cluster_extract_tolerance_follows_data_scale():
    # centroids shrunk near zero, a gap of 1e-9 is below 1e-8 * scale(x) but not 1e-8 * scale(u_hat)
    point = replace(make_point(np.array([0.0, 1e-9, 0.01]), 3), gamma_hat=None)
    x = np.array([-50.0, 20.0, 100.0])
    assert cluster_extract(point, x=x) == Partition.from_labels([0, 0, 1])
    assert cluster_extract(point) == Partition.from_labels([0, 1, 2])


def test_default_grid():
    grid = default_grid(2.0, count=5, min_frac=0.01)
    assert grid[0] == 0.0
    assert len(grid) == 6
    assert grid[1] == pytest.approx(0.02)
    assert grid[-1] == pytest.approx(2.0)
    assert all(later > earlier for earlier, later in zip(grid, grid[1:]))
    assert default_grid(0.0) == [0.0]
    with pytest.raises(ValueError):
        default_grid(1.0, count=0)


def test_kmeans_penalty_singletons():
    assert kmeans_penalty_value(Partition.singletons(3), 2.0) == 6.0
    assert kmeans_penalty_value(Partition.single_cluster(3), 2.0) == 0.0


def test_kmeans_penalty_two_clusters():
    partition = Partition.from_labels([0, 0, 1, 1, 1])
    assert kmeans_penalty_value(partition, 1.0) == 2 * 3


def test_fusion_objective_l0():
    X = np.array([[0.0], [2.0], [10.0]])
    partition = Partition.from_labels([0, 0, 1])
    assert fusion_objective_l0(X, partition, 1.0) == pytest.approx(0.5 * 2.0 + 2.0)


def test_kmeans_penalty_one_singleton():
    assert kmeans_penalty_value(Partition.from_labels([0] + [1] * 9), 1.0) == 9.0


def test_refine_path_visits_every_cluster_count(three_point):
    x, D = three_point
    path = solve_path(x, D, FusionNorm.L1, [0.0, 2.0])
    assert path.cluster_counts == [3, 1]
    refined = refine_path(path, x, D)
    counts = refined.cluster_counts
    assert 2 in counts
    assert all(abs(a - b) <= 1 for a, b in zip(counts, counts[1:]))
    assert all(a < b for a, b in zip(refined.lambdas, refined.lambdas[1:]))
    assert refined.lambdas[0] == 0.0 and refined.lambdas[-1] == 2.0


def test_refine_path_splits_simultaneous_fusions():
    X = random_matrix(8, 3, seed=17)
    D = DifferenceOperator.for_shape(8, 3)
    x = X.reshape(-1)
    top = 1.1 * loose_upper_bound(x, D, FusionNorm.L2)
    refined = refine_path(solve_path(x, D, FusionNorm.L2, [0.0, top]), x, D, budget=400, min_gap=1e-7)
    counts = refined.cluster_counts
    assert counts[0] == 8 and counts[-1] == 1
    assert all(abs(a - b) <= 1 for a, b in zip(counts, counts[1:]))


def test_refine_path_budget(three_point):
    x, D = three_point
    path = solve_path(x, D, FusionNorm.L1, [0.0, 2.0])
    assert refine_path(path, x, D, budget=0).lambdas == [0.0, 2.0]
    assert len(refine_path(path, x, D, budget=1).points) == 3
    assert refine_path(path, x, D, min_gap=1.0).lambdas == [0.0, 2.0]
    with pytest.raises(ValueError, match="budget"):
        refine_path(path, x, D, budget=-1)
