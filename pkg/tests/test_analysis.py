"""Tests for the analysis pipeline.

The Ward oracle recomputes merge costs from raw points at every step (sum of
squared deviations before and after each candidate merge), independent of the
Lance-Williams recursion used by the implementation. scipy appears only as a
second, independent cross-check.
"""

import numpy as np
import pytest
from scipy import stats
from scipy.cluster.hierarchy import linkage

from svrtlab.analysis import (
    AccuracyMatrix,
    SlopeVector,
    correlate_slopes,
    correlation_table_csv,
    dendrogram_to_csv,
    matrix_from_results,
    matrix_to_csv,
    pca,
    pearson,
    permutation_p,
    slope_vector,
    standardize_columns,
    ward_cluster,
)
from svrtlab.errors import DataError, DegenerateError
from svrtlab.nn import ModelConfig
from svrtlab.training import RunConfig, RunResult


def ward_oracle(points):
    """Brute-force Ward: recompute every candidate merge cost from scratch."""
    points = np.asarray(points, dtype=np.float64)

    def sse(members):
        pts = points[members]
        return float(((pts - pts.mean(axis=0)) ** 2).sum())

    clusters = [[i] for i in range(len(points))]
    ids = list(range(len(points)))
    merges = []
    next_id = len(points)
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                cost = sse(clusters[i] + clusters[j]) - sse(clusters[i]) - sse(clusters[j])
                if best is None or cost < best[0]:
                    best = (cost, i, j)
        cost, i, j = best
        merges.append((ids[i], ids[j], float(np.sqrt(2.0 * cost)), len(clusters[i]) + len(clusters[j])))
        merged = clusters[i] + clusters[j]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)] + [merged]
        ids = [d for k, d in enumerate(ids) if k not in (i, j)] + [next_id]
        next_id += 1
    return merges


def fake_result(task_id, tier, n_train, acc, seed=0):
    cfg = RunConfig(task_id=task_id, model=ModelConfig(depth_tier=tier), n_train=n_train, seed=seed)
    return RunResult(
        config=cfg,
        best_val_acc=acc,
        test_acc=acc,
        epochs_ran=1,
        stopped_early=False,
        restart_index=0,
        train_loss=(0.5,),
        train_acc=(acc,),
        val_acc=(acc,),
        wall_time=0.0,
    )


class TestAccuracyMatrix:
    def test_validation(self):
        with pytest.raises(DataError):
            AccuracyMatrix((1, 2), ("a",), np.zeros((2, 2)))
        with pytest.raises(DataError):
            AccuracyMatrix((1, 2), ("a", "a"), np.zeros((2, 2)))
        with pytest.raises(DataError):
            AccuracyMatrix((1, 1), ("a", "b"), np.zeros((2, 2)))
        with pytest.raises(DataError):
            AccuracyMatrix((1, 2), ("a", "b"), np.full((2, 2), np.nan))
        with pytest.raises(DataError):
            AccuracyMatrix((1, 2), ("a", "b"), np.full((2, 2), 1.5))

    def test_from_results_means_over_seeds(self):
        results = [
            fake_result(1, "tiny", 500, 0.6, seed=0),
            fake_result(1, "tiny", 500, 0.8, seed=1),
            fake_result(1, "tiny", 1000, 0.9),
            fake_result(2, "tiny", 500, 0.55),
            fake_result(2, "tiny", 1000, 0.95),
        ]
        matrix = matrix_from_results(results, tiers=("tiny",), sizes=(500, 1000))
        assert matrix.task_ids == (1, 2)
        assert matrix.columns == ("tiny_n500", "tiny_n1000")
        assert np.allclose(matrix.values, [[0.7, 0.9], [0.55, 0.95]])

    def test_from_results_missing_combo(self):
        with pytest.raises(DataError, match="no runs"):
            matrix_from_results([fake_result(1, "tiny", 500, 0.6)], ("tiny",), (500, 1000))

    def test_standardize(self):
        rng = np.random.default_rng(0)
        values = rng.uniform(0.2, 0.9, size=(6, 3))
        std = standardize_columns(values)
        assert np.allclose(std.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(std.std(axis=0), 1.0, atol=1e-12)
        with pytest.raises(DegenerateError):
            standardize_columns(np.ones((4, 2)))


class TestWardCluster:
    def test_identical_rows_merge_first_at_zero(self):
        points = np.array([[0.0, 0.0], [5.0, 1.0], [5.0, 1.0], [9.0, 9.0]])
        dendrogram = ward_cluster(points)
        a, b, dist, size = dendrogram.merges[0]
        assert (a, b) == (1, 2)
        assert dist == 0.0 and size == 2

    def test_two_rows(self):
        dendrogram = ward_cluster(np.array([[0.0, 0.0], [3.0, 4.0]]))
        assert dendrogram.merges == ((0, 1, 5.0, 2),)
        assert dendrogram.leaf_order == (0, 1)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(25):
            points = rng.uniform(0.0, 1.0, size=(5, 15))
            ours = ward_cluster(points).merges
            ref = ward_oracle(points)
            for (a, b, d, s), (oa, ob, od, os_) in zip(ours, ref):
                assert {a, b} == {oa, ob}, f"trial {trial}"
                assert s == os_
                assert abs(d - od) < 1e-9

    def test_matches_scipy_linkage(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            points = rng.normal(size=(8, 4))
            ours = ward_cluster(points).merges
            ref = linkage(points, method="ward")
            for (a, b, d, s), row in zip(ours, ref):
                assert {a, b} == {int(row[0]), int(row[1])}
                assert abs(d - row[2]) < 1e-9
                assert s == int(row[3])

    def test_heights_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            heights = ward_cluster(rng.normal(size=(9, 5))).heights()
            assert all(h2 >= h1 - 1e-12 for h1, h2 in zip(heights, heights[1:]))

    def test_leaf_order_is_permutation_rooted_at_zero(self):
        rng = np.random.default_rng(4)
        dendrogram = ward_cluster(rng.normal(size=(7, 3)))
        assert sorted(dendrogram.leaf_order) == list(range(7))
        assert dendrogram.leaf_order[0] == 0
        assert len(dendrogram.merges) == 6

    def test_errors(self):
        with pytest.raises(DataError):
            ward_cluster(np.array([[1.0, np.nan]]))
        with pytest.raises(DataError):
            ward_cluster(np.ones((1, 4)))

    def test_accepts_accuracy_matrix(self):
        matrix = AccuracyMatrix((1, 2, 3), ("a", "b"), [[0.1, 0.2], [0.1, 0.2], [0.9, 0.8]])
        dendrogram = ward_cluster(matrix)
        assert dendrogram.merges[0][:2] == (0, 1)


class TestPca:
    def test_rank_one(self):
        base = np.outer([1.0, 2.0, 3.0, 4.0], [0.2, 0.1, 0.05])
        result = pca(base)
        assert abs(result.explained_ratio[0] - 1.0) < 1e-10

    def test_ratios_sum_sorted_nonnegative(self):
        rng = np.random.default_rng(5)
        result = pca(rng.uniform(size=(10, 6)))
        ratios = result.explained_ratio
        assert abs(ratios.sum() - 1.0) < 1e-10
        assert np.all(ratios >= 0.0)
        assert np.all(np.diff(ratios) <= 1e-12)

    def test_reconstruction_at_full_rank(self):
        rng = np.random.default_rng(6)
        values = rng.normal(size=(9, 4))
        result = pca(values)
        centered = values - values.mean(axis=0)
        rebuilt = result.projections @ result.components
        assert np.allclose(rebuilt, centered, atol=1e-8)

    def test_sign_convention(self):
        rng = np.random.default_rng(7)
        result = pca(rng.normal(size=(8, 5)))
        for row in result.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_matches_svd_oracle(self):
        rng = np.random.default_rng(8)
        values = rng.normal(size=(12, 5))
        centered = values - values.mean(axis=0)
        _, s, _ = np.linalg.svd(centered, full_matrices=False)
        expected = (s**2) / (s**2).sum()
        assert np.allclose(pca(values).explained_ratio, expected, atol=1e-10)

    def test_projections_orthogonal_components(self):
        rng = np.random.default_rng(9)
        result = pca(rng.normal(size=(10, 4)), k=3)
        assert result.components.shape == (3, 4)
        assert result.projections.shape == (10, 3)
        gram = result.components @ result.components.T
        assert np.allclose(gram, np.eye(3), atol=1e-10)

    def test_errors(self):
        rng = np.random.default_rng(10)
        with pytest.raises(DataError):
            pca(rng.normal(size=(5, 3)), k=4)
        with pytest.raises(DataError):
            pca(rng.normal(size=(2, 5)), k=4)
        with pytest.raises(DataError):
            pca(np.ones((1, 3)))
        with pytest.raises(DegenerateError):
            pca(np.ones((4, 3)))


class TestSlopeVector:
    SIZES = (500, 1000, 5000, 10000, 15000)

    def test_equal_slices_give_zero(self):
        rng = np.random.default_rng(11)
        vanilla = rng.uniform(0.4, 0.9, size=(23, 5))
        result = slope_vector(vanilla, vanilla, self.SIZES, model_tag="attn")
        assert result.model_tag == "attn"
        assert len(result.slopes) == 23
        assert max(abs(s) for s in result.slopes) < 1e-12

    def test_recovers_constructed_slope(self):
        rng = np.random.default_rng(12)
        vanilla = rng.uniform(0.4, 0.8, size=(4, 5))
        x = np.log10(self.SIZES)
        ratios = 1.0 + 0.1 * (x - x.mean())
        attn = vanilla * ratios
        result = slope_vector(attn, vanilla, self.SIZES)
        assert all(abs(s - 0.1) < 1e-12 for s in result.slopes)

    def test_matches_polyfit_oracle(self):
        rng = np.random.default_rng(13)
        vanilla = rng.uniform(0.3, 0.9, size=(6, 5))
        attn = rng.uniform(0.3, 0.95, size=(6, 5))
        result = slope_vector(attn, vanilla, self.SIZES)
        x = np.log10(self.SIZES)
        for row in range(6):
            expected = np.polyfit(x, attn[row] / vanilla[row], 1)[0]
            assert abs(result.slopes[row] - expected) < 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(14)
        vanilla = rng.uniform(0.3, 0.5, size=(3, 5))
        attn = rng.uniform(0.3, 0.5, size=(3, 5))
        a = slope_vector(attn, vanilla, self.SIZES)
        b = slope_vector(attn * 2.0 / 2.0, vanilla, self.SIZES)
        c = slope_vector(np.minimum(attn * 2.0, 1.0) / 2.0, np.minimum(vanilla * 2.0, 1.0) / 2.0, self.SIZES)
        assert np.allclose(a.slopes, b.slopes, atol=1e-15)
        assert np.allclose(a.slopes, c.slopes, atol=1e-12)

    def test_x_modes(self):
        vanilla = np.full((2, 5), 0.5)
        attn = vanilla * (1.0 + 0.01 * np.arange(5))
        by_index = slope_vector(attn, vanilla, self.SIZES, x_mode="index")
        assert np.allclose(by_index.slopes, 0.01, atol=1e-12)
        raw = slope_vector(attn, vanilla, self.SIZES, x_mode="raw")
        assert all(np.isfinite(raw.slopes))

    def test_errors(self):
        vanilla = np.full((2, 5), 0.5)
        with pytest.raises(DegenerateError):
            slope_vector(vanilla, vanilla, (100,) * 5)
        with pytest.raises(DataError):
            slope_vector(vanilla, np.zeros((2, 5)), self.SIZES)
        with pytest.raises(DataError):
            slope_vector(vanilla[:, :4], vanilla, self.SIZES)
        with pytest.raises(DataError):
            slope_vector(vanilla, vanilla, self.SIZES, x_mode="sqrt")


def vector_with_exact_r(r, n=23, seed=0):
    """Construct (x, y) whose sample Pearson correlation is exactly r."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    z = rng.normal(size=n)
    xc = x - x.mean()
    zc = z - z.mean()
    zc -= (zc @ xc) / (xc @ xc) * xc
    xn = xc / np.linalg.norm(xc)
    zn = zc / np.linalg.norm(zc)
    return x, r * xn + np.sqrt(1.0 - r * r) * zn


class TestPearson:
    def test_perfect_correlation(self):
        x = np.array([1.0, 2.0, 4.0, 9.0])
        assert pearson(x, x) == (1.0, 0.0)
        r, p = pearson(x, -x)
        assert r == -1.0 and p == 0.0

    def test_paper_table_pairs(self):
        for r_target, p_expected in ((0.649, 0.0008), (-0.652, 0.0007), (0.466, 0.0249), (-0.491, 0.0174)):
            x, y = vector_with_exact_r(r_target)
            r, p = pearson(x, y)
            assert abs(r - r_target) < 1e-12
            assert abs(p - p_expected) < 2e-4

    def test_matches_scipy(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            x = rng.normal(size=13)
            y = 0.4 * x + rng.normal(size=13)
            r, p = pearson(x, y)
            ref = stats.pearsonr(x, y)
            assert abs(r - ref.statistic) < 1e-12
            assert abs(p - ref.pvalue) < 1e-12

    def test_symmetry_and_affine_invariance(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=11)
        y = rng.normal(size=11)
        assert pearson(x, y) == pearson(y, x)
        r0, _ = pearson(x, y)
        r1, _ = pearson(3.0 * x + 7.0, y)
        r2, _ = pearson(x, 0.2 * y - 4.0)
        assert abs(r0 - r1) < 1e-12 and abs(r0 - r2) < 1e-12

    def test_errors(self):
        with pytest.raises(DataError):
            pearson([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(DataError):
            pearson([1.0, 2.0, 3.0], [1.0, 2.0])
        with pytest.raises(DegenerateError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(DataError):
            pearson([1.0, np.nan, 3.0], [1.0, 2.0, 3.0])


class TestPermutationP:
    def test_tracks_analytic_p(self):
        x, y = vector_with_exact_r(0.466)
        _, p_exact = pearson(x, y)
        p_perm = permutation_p(x, y, n_perm=40000, seed=1)
        sigma = np.sqrt(p_exact * (1.0 - p_exact) / 40000)
        assert abs(p_perm - p_exact) < 5 * sigma

    def test_deterministic_and_bounded(self):
        x, y = vector_with_exact_r(0.9)
        a = permutation_p(x, y, n_perm=5000, seed=2)
        b = permutation_p(x, y, n_perm=5000, seed=2)
        assert a == b
        assert a >= 1.0 / 5001


class TestCorrelateSlopes:
    def test_slopes_equal_to_projection(self):
        rng = np.random.default_rng(17)
        result = pca(rng.normal(size=(23, 6)), k=2)
        slopes = SlopeVector(slopes=tuple(result.projections[:, 0]), model_tag="sam")
        table = correlate_slopes(slopes, result.projections)
        assert table[0][0] == 1.0 and table[0][1] == 0.0
        assert abs(table[1][0]) < 1.0

    def test_shape_error(self):
        with pytest.raises(DataError):
            correlate_slopes(SlopeVector((0.1, 0.2), "sam"), np.zeros((3, 2)))


class TestCsvOutputs:
    def test_matrix_csv(self):
        matrix = AccuracyMatrix((1, 2), ("a", "b"), [[0.5, 0.625], [0.75, 1.0]])
        text = matrix_to_csv(matrix)
        lines = text.strip().split("\n")
        assert lines[0] == "task,a,b"
        assert lines[1] == "1,0.500000,0.625000"
        assert len(lines) == 3

    def test_dendrogram_csv(self):
        text = dendrogram_to_csv(ward_cluster(np.array([[0.0, 0.0], [3.0, 4.0]])))
        assert text.splitlines() == ["cluster_a,cluster_b,distance,size", "0,1,5,2"]

    def test_correlation_csv(self):
        text = correlation_table_csv([(0.5, 0.01), (-0.2, 0.4)])
        lines = text.splitlines()
        assert lines[0] == "component,r,p"
        assert lines[1].startswith("pc1,0.500000,")
        assert len(lines) == 3
