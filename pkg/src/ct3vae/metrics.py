"""Generative evaluation: feature-space Frechet distance and k-NN manifold
precision / recall / F1, reported per class against a balanced test set.

Feature embeddings are either the raw sample space or a seeded
QR-orthonormalized random projection; one projection is drawn per
evaluation and shared by the real and generated sets, so distances are
comparable.  A class that the generator never produces is flagged as
collapsed and scores zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset


@dataclass(frozen=True)
class FeatureSpace:
    kind: str = "raw"                  # "raw" | "random_projection"
    projection_seed: int = 0
    output_dim: int = 64

    def __post_init__(self):
        if self.kind not in ("raw", "random_projection"):
            raise ValueError(f"unknown feature space {self.kind!r}")

    def projector(self, n: int):
        """A fixed map from sample space to feature space."""
        if self.kind == "raw" or n <= self.output_dim:
            return lambda x: np.asarray(x, dtype=np.float64)
        rng = np.random.default_rng(self.projection_seed)
        q, _ = np.linalg.qr(rng.standard_normal((n, self.output_dim)))
        return lambda x: np.asarray(x, dtype=np.float64) @ q


def default_feature_space(n: int) -> FeatureSpace:
    return FeatureSpace("raw") if n <= 64 else FeatureSpace("random_projection")


def frechet_distance(mu1, cov1, mu2, cov2) -> float:
    """Squared 2-Wasserstein distance between gaussians with the given moments.

    The matrix square root is taken by symmetric eigendecomposition of
    C2^(1/2) C1 C2^(1/2); eigenvalues below -1e-8 are rejected, small
    negatives from rounding are clamped to zero.
    """
    mu1 = np.asarray(mu1, dtype=np.float64).reshape(-1)
    mu2 = np.asarray(mu2, dtype=np.float64).reshape(-1)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape or cov1.shape[0] != mu1.shape[0]:
        raise ValueError("moment shapes do not match")
    for cov in (cov1, cov2):
        if np.max(np.abs(cov - cov.T)) > 1e-10:
            raise ValueError("covariance input is not symmetric")

    vals2, vecs2 = np.linalg.eigh(cov2)
    if np.any(vals2 < -1e-8):
        raise ValueError(f"covariance has negative eigenvalue {vals2.min()}")
    root2 = (vecs2 * np.sqrt(np.clip(vals2, 0.0, None))) @ vecs2.T
    inner = root2 @ cov1 @ root2
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if np.any(vals < -1e-8):
        raise ValueError(f"cross product has negative eigenvalue {vals.min()}")
    trace_sqrt = float(np.sum(np.sqrt(np.clip(vals, 0.0, None))))
    dist = float(np.sum((mu1 - mu2) ** 2) + np.trace(cov1) + np.trace(cov2)
                 - 2.0 * trace_sqrt)
    return max(dist, 0.0)


def _moments(feats):
    mu = feats.mean(axis=0)
    centered = feats - mu
    cov = centered.T @ centered / max(feats.shape[0] - 1, 1)
    return mu, cov


def frechet_from_samples(real_feats, gen_feats) -> float:
    mu1, cov1 = _moments(np.asarray(real_feats, dtype=np.float64))
    mu2, cov2 = _moments(np.asarray(gen_feats, dtype=np.float64))
    return frechet_distance(mu1, cov1, mu2, cov2)


def _kth_neighbor_radii(feats, k):
    """Distance to the k-th nearest other point, for every point."""
    d2 = np.sum(feats ** 2, axis=1)
    sq = d2[:, None] + d2[None, :] - 2.0 * feats @ feats.T
    np.fill_diagonal(sq, np.inf)
    sq = np.maximum(sq, 0.0)
    kth = np.partition(sq, k - 1, axis=1)[:, k - 1]
    return np.sqrt(kth)


def _cross_distances(a, b):
    a2 = np.sum(a ** 2, axis=1)
    b2 = np.sum(b ** 2, axis=1)
    sq = np.maximum(a2[:, None] + b2[None, :] - 2.0 * a @ b.T, 0.0)
    return np.sqrt(sq)


def knn_precision_recall(real_feats, gen_feats, k: int = 3):
    """Manifold precision and recall via k-NN balls.

    Precision: fraction of generated points inside some real point's k-NN
    ball.  Recall: fraction of real points inside some generated point's
    k-NN ball.
    """
    real = np.asarray(real_feats, dtype=np.float64)
    gen = np.asarray(gen_feats, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be at least 1")
    if real.shape[0] < k + 1 or gen.shape[0] < k + 1:
        raise ValueError(f"both sets need at least k+1 = {k + 1} points")
    real_radii = _kth_neighbor_radii(real, k)
    gen_radii = _kth_neighbor_radii(gen, k)
    cross = _cross_distances(real, gen)        # rows real, cols generated
    precision = float(np.mean(np.any(cross <= real_radii[:, None], axis=0)))
    recall = float(np.mean(np.any(cross <= gen_radii[None, :], axis=1)))
    return precision, recall


def _f1(p, r):
    return 2.0 * p * r / (p + r) if (p + r) > 0.0 else 0.0


@dataclass
class ClassRow:
    label: int
    real_count: int
    gen_count: int
    precision: float
    recall: float
    f1: float
    frechet: float
    collapsed: bool = False


@dataclass
class ClassReport:
    rows: list = field(default_factory=list)
    macro_precision: float = 0.0
    macro_recall: float = 0.0
    macro_f1: float = 0.0
    pooled_frechet: float = 0.0
    collapsed_classes: list = field(default_factory=list)

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def per_class_report(real: LabeledDataset, gen_samples, gen_labels,
                     feature_space: FeatureSpace | None = None,
                     k: int = 3) -> ClassReport:
    """Per-class precision/recall/F1 and Frechet distances, plus macro averages.

    A class with no generated samples is a mode-collapse signal: it is
    flagged and scored zero rather than erroring out.
    """
    gen_samples = np.asarray(gen_samples, dtype=np.float64)
    gen_labels = np.asarray(gen_labels, dtype=np.int64)
    if gen_samples.shape[0] != gen_labels.shape[0]:
        raise ValueError("generated samples and labels disagree in length")
    if feature_space is None:
        feature_space = default_feature_space(real.n)
    project = feature_space.projector(real.n)
    real_feats = project(real.samples)
    gen_feats = project(gen_samples) if gen_samples.size else gen_samples.reshape(0, real.n)

    report = ClassReport()
    for y in range(real.K):
        real_rows = real_feats[real.labels == y]
        gen_rows = gen_feats[gen_labels == y] if gen_feats.size else gen_feats
        if real_rows.shape[0] == 0:
            raise ValueError(f"class {y} missing from the real test set")
        if gen_rows.shape[0] < k + 1:
            report.rows.append(ClassRow(y, real_rows.shape[0], gen_rows.shape[0],
                                        0.0, 0.0, 0.0, float("inf"), collapsed=True))
            report.collapsed_classes.append(y)
            continue
        p, r = knn_precision_recall(real_rows, gen_rows, k)
        fd = frechet_from_samples(real_rows, gen_rows)
        report.rows.append(ClassRow(y, real_rows.shape[0], gen_rows.shape[0],
                                    p, r, _f1(p, r), fd))
    report.macro_precision = float(np.mean([r.precision for r in report.rows]))
    report.macro_recall = float(np.mean([r.recall for r in report.rows]))
    report.macro_f1 = float(np.mean([r.f1 for r in report.rows]))
    if gen_feats.shape[0] >= 2:
        report.pooled_frechet = frechet_from_samples(real_feats, gen_feats)
    else:
        report.pooled_frechet = float("inf")
    return report


def balance_test_set(dataset: LabeledDataset, seed: int = 0) -> LabeledDataset:
    """Uniform per-class downsample to the smallest class size."""
    counts = dataset.class_counts
    if np.any(counts == 0):
        raise ValueError("every class must be present to balance the test set")
    target = int(counts.min())
    rng = np.random.default_rng(seed)
    keep = []
    for y in range(dataset.K):
        rows = np.nonzero(dataset.labels == y)[0]
        if rows.size == target:
            keep.append(rows)
        else:
            keep.append(np.sort(rng.choice(rows, size=target, replace=False)))
    keep = np.concatenate(keep)
    return LabeledDataset(dataset.samples[keep], dataset.labels[keep], rho=1.0)
