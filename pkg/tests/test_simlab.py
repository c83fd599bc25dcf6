import numpy as np
import pytest
from numpy.testing import assert_allclose

from fusepathlib.diffop import FusionNorm
from fusepathlib.simlab import (
    DOF_FIGURE_COLUMNS,
    EXPERIMENTS,
    ExperimentError,
    ExperimentSettings,
    GaussianClusterSpec,
    Method,
    Shape,
    ShapeClusterSpec,
    Table1Experiment,
    bound_lambda_prime,
    check_prediction_bound,
    create_experiment,
    gen_gaussian,
    gen_shape,
    generate,
    prediction_bound_rhs,
    _path_for,
    run_dof_figure,
    run_rand_curves,
    run_table1,
)
from fusepathlib.solver import SolveSettings


def test_gaussian_data_is_reproducible():
    spec = GaussianClusterSpec(K=3, n=12, p=4, sigma=0.5, seed=5)
    first, again, other = gen_gaussian(spec, 2), gen_gaussian(spec, 2), gen_gaussian(spec, 3)
    assert_allclose(first.X, again.X)
    assert first.truth == again.truth
    assert not np.allclose(first.X, other.X)


def test_gaussian_centroids_follow_truth():
    data = gen_gaussian(GaussianClusterSpec(K=3, n=15, p=2, sigma=0.0, seed=1))
    assert_allclose(data.X, data.u_true)
    levels = {-3.0, 0.0, 3.0}
    for members in data.truth.clusters():
        rows = data.u_true[members]
        assert np.all(rows == rows[0])
        assert rows[0, 0] in levels


def test_gaussian_custom_means():
    means = np.array([[5.0, 5.0], [-5.0, 0.0]])
    data = gen_gaussian(GaussianClusterSpec(K=2, n=6, p=2, sigma=0.0, means=means))
    for row in data.X:
        assert any(np.array_equal(row, mean) for mean in means)


@pytest.mark.parametrize(
    "kwargs",
    [{"n": 1}, {"sigma": -1.0}, {"K": 4}, {"K": 2, "p": 3, "means": np.zeros((2, 2))}],
)
def test_gaussian_spec_validation(kwargs):
    with pytest.raises(ExperimentError):
        GaussianClusterSpec(**kwargs)


def test_two_circles_radii():
    data = gen_shape(ShapeClusterSpec(Shape.TWO_CIRCLES, points_per_cluster=10, noise_sd=0.0))
    radii = np.linalg.norm(data.X, axis=1)
    assert_allclose(radii[:10], 2.0)
    assert_allclose(radii[10:], 10.0)
    assert data.truth.sizes() == [10, 10]


def test_half_moons_layout():
    data = gen_shape(ShapeClusterSpec(Shape.TWO_HALF_MOONS, points_per_cluster=25, noise_sd=0.0), replicate=1)
    upper, lower = data.X[:25], data.X[25:]
    assert np.all(upper[:, 1] >= -1e-9)
    assert np.all(lower[:, 1] <= 3.0 + 1e-9)
    assert_allclose(np.linalg.norm(lower - [30.0, 3.0], axis=1), 30.0)


def test_shape_noise_defaults():
    assert ShapeClusterSpec(Shape.TWO_CIRCLES).noise == 0.1
    assert ShapeClusterSpec(Shape.TWO_HALF_MOONS).noise == 1.0
    assert ShapeClusterSpec(Shape.TWO_HALF_MOONS, noise_sd=0.3).noise == 0.3


def test_shape_data_has_no_centroids():
    data = generate(ShapeClusterSpec(points_per_cluster=3))
    with pytest.raises(ExperimentError):
        data.u_true


def test_rand_curves_table():
    spec = GaussianClusterSpec(K=2, n=8, p=2, sigma=0.1)
    methods = [Method.SINGLE, Method.KMEANS, Method.CONVEX_L2]
    table = run_rand_curves(spec, methods, reps=2, seed=3, grid_count=6)
    assert table.columns == ["method", "k", "mean_rand", "n_reps"]
    assert {row["method"] for row in table.rows} == {"single", "kmeans", "convex-q2"}
    assert all(0.0 <= row["mean_rand"] <= 1.0 for row in table.rows)
    single = [row for row in table.rows if row["method"] == "single"]
    assert [row["k"] for row in single] == list(range(1, 9))
    assert all(row["n_reps"] == 2 for row in single)


def test_rand_curves_independent_of_threads():
    spec = ShapeClusterSpec(Shape.TWO_CIRCLES, points_per_cluster=5)
    serial = run_rand_curves(spec, [Method.AVERAGE, Method.CONVEX_L1], reps=3, seed=1, grid_count=5)
    threaded = run_rand_curves(spec, [Method.AVERAGE, Method.CONVEX_L1], reps=3, seed=1, grid_count=5, threads=3)
    assert threaded.to_csv() == serial.to_csv()


def test_rand_curves_needs_replicates():
    with pytest.raises(ExperimentError):
        run_rand_curves(GaussianClusterSpec(), [Method.SINGLE], reps=0)


def test_bound_lambda_prime():
    assert bound_lambda_prime(20, 20, 0.5, FusionNorm.L1) < bound_lambda_prime(20, 20, 0.5, FusionNorm.L2)
    assert bound_lambda_prime(20, 1, 0.5, FusionNorm.L1) == pytest.approx(bound_lambda_prime(20, 1, 0.5, FusionNorm.L2))
    assert bound_lambda_prime(2, 1, 0.5, FusionNorm.L2) == 0.0


def test_prediction_bound_rhs_for_constant_centroids():
    u_true = np.zeros((4, 4))
    expected = 0.25 + np.sqrt(np.log(16) / 64)
    assert prediction_bound_rhs(u_true, 1.0, FusionNorm.L2, 0.3) == pytest.approx(expected)


def test_check_prediction_bound_report():
    u_true = gen_gaussian(GaussianClusterSpec(K=2, n=10, p=5, sigma=0.5, seed=2)).u_true
    report = check_prediction_bound(u_true, 0.5, FusionNorm.L2, reps=3, seed=4)
    assert len(report.lhs) == 3
    assert report.hold_fraction == sum(report.holds) / 3
    table = report.to_table()
    assert table.column("rep") == [0, 1, 2]
    assert table.column("rhs") == [report.rhs] * 3
    with pytest.raises(ExperimentError):
        check_prediction_bound(u_true, 0.5, FusionNorm.L2, reps=3, lambda_prime_multiplier=0.5)


def test_dof_figure_starts_at_full_dimension():
    spec = GaussianClusterSpec(K=2, n=6, p=2, sigma=0.5)
    table = run_dof_figure(spec, FusionNorm.L1, reps=3, seed=2, grid_count=3)
    assert table.columns == DOF_FIGURE_COLUMNS
    assert len(table) == 4
    first = table.rows[0]
    assert first["lambda"] == 0.0
    assert first["df_hat"] == 12.0
    assert first["df_hat_sd"] == 0.0
    assert table.column("n_reps") == [3] * 4


def test_dof_figure_argument_checks():
    with pytest.raises(ExperimentError):
        run_dof_figure(GaussianClusterSpec(n=6, p=2), FusionNorm.L2, reps=1)
    with pytest.raises(ExperimentError):
        run_dof_figure(GaussianClusterSpec(n=6, p=2, sigma=0.0), FusionNorm.L2, reps=3)


def test_create_experiment():
    assert sorted(EXPERIMENTS) == ["dof-figure", "pred-bound", "rand-curves", "table1"]
    experiment = create_experiment("table1", ExperimentSettings(reps=2, seed=9))
    assert isinstance(experiment, Table1Experiment)
    config = experiment.config()
    assert config["experiment"] == "table1"
    assert config["seed"] == 9
    assert config["shape"] is None
    with pytest.raises(ExperimentError, match="dof-figure"):
        create_experiment("figure-9", ExperimentSettings())


def test_prediction_bound_experiment_runs():
    tables = create_experiment("pred-bound", ExperimentSettings(reps=2, q=1)).run()
    assert [table.name for table in tables] == ["prediction_bound"]
    assert len(tables[0]) == 2


def test_selection_path_visits_every_cluster_count():
    X = gen_gaussian(GaussianClusterSpec(K=2, n=8, p=2, sigma=0.5, seed=11)).X
    coarse = _path_for(X, FusionNorm.L2, grid_count=4, settings=SolveSettings(), refine_budget=0)
    refined = _path_for(X, FusionNorm.L2, grid_count=4, settings=SolveSettings())
    assert len(coarse.points) == 5
    assert len(refined.points) >= len(coarse.points)
    assert set(coarse.lambdas) <= set(refined.lambdas)
    counts = [point.k for point in refined.points]
    assert counts[0] == 8
    assert counts[-1] <= 2
    assert all(abs(a - b) <= 1 for a, b in zip(counts, counts[1:]))


def test_run_table1_shape():
    gammas = (0.0, 1.0)
    table = run_table1(reps=10, gammas=gammas, seed=3, grid_count=3, refine_budget=0)
    assert table.columns == ["setting", "k_true", "gamma", "proportion_correct", "mean_rand", "n_reps"]
    assert len(table) == 2 * len(gammas)
    assert [(row["k_true"], row["gamma"]) for row in table.rows] == [(2, 0.0), (2, 1.0), (3, 0.0), (3, 1.0)]
    assert table.column("n_reps") == [10] * 4
    assert all(0.0 <= row["proportion_correct"] <= 1.0 for row in table.rows)
    with pytest.raises(ExperimentError):
        run_table1(reps=1, gammas=())


def test_run_table1_counts_unconverged_replicates():
    table = run_table1(reps=1, gammas=(1.0,), grid_count=2, settings=SolveSettings(max_iter=1), refine_budget=0)
    assert table.failures == 2


def test_prediction_bound_counts_unconverged_replicates():
    u_true = gen_gaussian(GaussianClusterSpec(K=2, n=6, p=2, sigma=0.5)).u_true
    report = check_prediction_bound(u_true, 0.5, FusionNorm.L2, reps=2, settings=SolveSettings(max_iter=1))
    assert report.unconverged == 2
    assert report.to_table().failures == 2


def test_experiment_settings_override_gaussian_data():
    assert ExperimentSettings().gaussian_spec(n=30, p=30, sigma=1.0) == GaussianClusterSpec(K=2, n=30, p=30, sigma=1.0)
    settings = ExperimentSettings(seed=5, clusters=3, sigma=0.0)
    assert settings.gaussian_spec(n=20, p=20, sigma=0.5) == GaussianClusterSpec(K=3, n=20, p=20, sigma=0.0, seed=5)
    config = create_experiment("rand-curves", settings).config()
    assert (config["clusters"], config["sigma"], config["multiplier"]) == (3, 0.0, 1.0)


def test_prediction_bound_experiment_uses_multiplier():
    settings = ExperimentSettings(reps=2, q=1, multiplier=3.0)
    table = create_experiment("pred-bound", settings).run()[0]
    expected = 3.0 * bound_lambda_prime(20, 20, 0.5, FusionNorm.L1)
    assert table.column("lambda_prime") == pytest.approx([expected] * 2)
    with pytest.raises(ExperimentError, match="multiplier"):
        create_experiment("pred-bound", ExperimentSettings(reps=2, multiplier=0.5)).run()
