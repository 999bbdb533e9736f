import numpy as np
import pytest

from ct3vae.data import LabeledDataset
from ct3vae.metrics import (FeatureSpace, balance_test_set, frechet_distance,
                            frechet_from_samples, knn_precision_recall,
                            per_class_report)


# -- Frechet ---------------------------------------------------------------------


def test_frechet_identical_moments_zero():
    mu = np.array([1.0, -2.0])
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    assert frechet_distance(mu, cov, mu, cov) < 1e-12


def test_frechet_mean_shift_only():
    cov = np.eye(2)
    assert np.isclose(frechet_distance([0.0, 0.0], cov, [1.0, 0.0], cov), 1.0)


def test_frechet_commuting_scales():
    # tr(4I + I - 2 sqrt(4I)) in two dimensions
    val = frechet_distance([0.0, 0.0], 4.0 * np.eye(2), [0.0, 0.0], np.eye(2))
    assert np.isclose(val, 2.0)


def test_frechet_symmetric_and_zero_iff_equal():
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = int(rng.integers(1, 6))
        a = rng.standard_normal((d, d))
        b = rng.standard_normal((d, d))
        cov1 = a @ a.T + 0.1 * np.eye(d)
        cov2 = b @ b.T + 0.1 * np.eye(d)
        mu1, mu2 = rng.standard_normal(d), rng.standard_normal(d)
        fwd = frechet_distance(mu1, cov1, mu2, cov2)
        rev = frechet_distance(mu2, cov2, mu1, cov1)
        assert abs(fwd - rev) < 1e-8
        assert fwd > 0.0
        assert frechet_distance(mu1, cov1, mu1, cov1) < 1e-8


def test_frechet_rejects_asymmetric_input():
    bad = np.array([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValueError, match="symmetric"):
        frechet_distance([0.0, 0.0], bad, [0.0, 0.0], np.eye(2))


def test_frechet_rejects_negative_eigenvalues():
    neg = np.diag([1.0, -0.5])
    with pytest.raises(ValueError, match="negative eigenvalue"):
        frechet_distance([0.0, 0.0], np.eye(2), [0.0, 0.0], neg)


# -- knn precision / recall ------------------------------------------------------------


def test_knn_self_manifold_perfect():
    pts = np.random.default_rng(1).standard_normal((50, 3))
    p, r = knn_precision_recall(pts, pts.copy(), k=3)
    assert p == 1.0 and r == 1.0


def test_knn_disjoint_supports_zero():
    rng = np.random.default_rng(2)
    real = rng.standard_normal((60, 2))
    gen = rng.standard_normal((60, 2)) + 100.0
    p, r = knn_precision_recall(real, gen, k=3)
    assert p == 0.0 and r == 0.0


def test_knn_single_mode_coverage():
    rng = np.random.default_rng(3)
    mode_a = rng.standard_normal((100, 2))
    mode_b = rng.standard_normal((100, 2)) + np.array([20.0, 0.0])
    real = np.vstack([mode_a, mode_b])
    gen = rng.standard_normal((100, 2))   # sits on mode A only
    p, r = knn_precision_recall(real, gen, k=3)
    assert abs(r - 0.5) <= 0.1
    assert p >= 0.9


def test_knn_requires_enough_points():
    pts = np.zeros((3, 2))
    with pytest.raises(ValueError, match="k"):
        knn_precision_recall(pts, pts, k=3)


def test_knn_monotone_under_covered_duplicates():
    rng = np.random.default_rng(4)
    real = rng.standard_normal((40, 2))
    gen = real + 0.01 * rng.standard_normal((40, 2))
    p0, r0 = knn_precision_recall(real, gen, k=3)
    # duplicating a covered generated point cannot decrease precision
    gen_dup = np.vstack([gen, gen[:1]])
    p1, _ = knn_precision_recall(real, gen_dup, k=3)
    assert p1 >= p0 - 1e-12
    # duplicating a covered real point cannot decrease recall
    real_dup = np.vstack([real, real[:1]])
    _, r1 = knn_precision_recall(real_dup, gen, k=3)
    assert r1 >= r0 - 1e-12


# -- per-class report --------------------------------------------------------------------


def three_class_sets(seed=5, per_class=60, n=4):
    rng = np.random.default_rng(seed)
    centers = np.array([[0.0] * n, [8.0] + [0.0] * (n - 1), [0.0, 8.0] + [0.0] * (n - 2)])
    samples, labels = [], []
    for y, c in enumerate(centers):
        samples.append(c + rng.standard_normal((per_class, n)))
        labels.extend([y] * per_class)
    return LabeledDataset(np.vstack(samples) / 20.0 + 0.5, np.array(labels))


def test_report_perfect_generation():
    real = three_class_sets()
    report = per_class_report(real, real.samples.copy(), real.labels.copy(), k=3)
    for row in report.rows:
        assert row.f1 == 1.0
        assert row.frechet < 1e-8
    assert report.macro_f1 == 1.0


def test_report_missing_class_flagged():
    real = three_class_sets()
    keep = real.labels != 2
    report = per_class_report(real, real.samples[keep], real.labels[keep], k=3)
    assert report.collapsed_classes == [2]
    assert report.row(2).f1 == 0.0
    assert report.row(2).collapsed


def test_report_macro_is_mean_of_rows():
    real = three_class_sets()
    rng = np.random.default_rng(6)
    gen = real.samples + 0.02 * rng.standard_normal(real.samples.shape)
    report = per_class_report(real, gen, real.labels, k=3)
    assert np.isclose(report.macro_f1, np.mean([r.f1 for r in report.rows]))


def test_report_single_class_degenerates_to_pooled():
    rng = np.random.default_rng(7)
    real = LabeledDataset(rng.uniform(0, 1, (80, 3)), np.zeros(80, dtype=np.int64))
    gen = rng.uniform(0, 1, (80, 3))
    report = per_class_report(real, gen, np.zeros(80, dtype=np.int64), k=3)
    p, r = knn_precision_recall(real.samples, gen, k=3)
    assert np.isclose(report.rows[0].precision, p)
    assert np.isclose(report.rows[0].recall, r)
    assert np.isclose(report.pooled_frechet, frechet_from_samples(real.samples, gen))
    assert np.isclose(report.rows[0].frechet, report.pooled_frechet)


def test_projection_shared_and_orthonormal():
    fs = FeatureSpace("random_projection", projection_seed=3, output_dim=8)
    project = fs.projector(100)
    x = np.random.default_rng(8).standard_normal((5, 100))
    assert np.array_equal(project(x), project(x))
    # orthonormal columns preserve norms of projected components
    q = project(np.eye(100))
    assert np.allclose(q.T @ q, np.eye(8), atol=1e-10)


# -- balancing ------------------------------------------------------------------------


def test_balance_already_balanced_identity():
    real = three_class_sets()
    balanced = balance_test_set(real, seed=0)
    assert sorted(map(tuple, balanced.samples)) == sorted(map(tuple, real.samples))


def test_balance_downsamples_to_min():
    rng = np.random.default_rng(9)
    samples = rng.uniform(0, 1, (120, 2))
    labels = np.array([0] * 100 + [1] * 20)
    balanced = balance_test_set(LabeledDataset(samples, labels), seed=1)
    assert list(balanced.class_counts) == [20, 20]


def test_balance_deterministic():
    rng = np.random.default_rng(10)
    ds = LabeledDataset(rng.uniform(0, 1, (90, 2)), np.array([0] * 60 + [1] * 30))
    a = balance_test_set(ds, seed=5)
    b = balance_test_set(ds, seed=5)
    assert np.array_equal(a.samples, b.samples)


def test_balance_rejects_empty_class():
    ds = LabeledDataset(np.random.default_rng(0).uniform(0, 1, (10, 2)),
                        np.array([0] * 5 + [2] * 5))
    with pytest.raises(ValueError, match="every class"):
        balance_test_set(ds)
