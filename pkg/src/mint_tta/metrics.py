"""Class-balanced embedding variance metrics.

Given N embeddings and a label assignment over C classes, three scalar
diagnostics are computed:

    total = (1/C') * sum_c  mean_{i in c} ||z_i - zbar||^2
    inter = (1/C') * sum_c  ||zbar_c - zbar||^2
    intra = (1/C') * sum_c  mean_{i in c} ||z_i - zbar_c||^2

where zbar is the unweighted global mean, zbar_c the per-class means, and
C' counts the classes that actually have samples (empty classes are skipped
from all three sums). The identity total = inter + intra holds exactly in
real arithmetic for any label assignment; callers use the residual as a
correctness probe.

The same functions serve both ground-truth labels and pseudo-labels; only
the label array differs. All computation is in double precision regardless
of how the embeddings were stored.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "EmbeddingSet",
    "VarianceReport",
    "compute_variance_report",
    "decomposition_residual",
    "pearson_correlation",
]


@dataclass
class EmbeddingSet:
    """N x d embedding rows with an optional label array and a class count."""

    data: np.ndarray
    n_classes: int
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DataError(f"embeddings must be 2-D, got shape {self.data.shape}")
        if self.n_classes < 1:
            raise DataError(f"n_classes must be positive, got {self.n_classes}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.data.shape[0],):
                raise DataError("labels length does not match number of embeddings")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
                raise DataError("label out of range")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class VarianceReport:
    """Total/inter/intra variances for one label assignment."""

    total: float
    inter: float
    intra: float
    per_class_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    classes_present: int = 0


def compute_variance_report(embeddings: EmbeddingSet, labels) -> VarianceReport:
    """Class-balanced total/inter/intra variances under the given labels.

    `labels` may be ground-truth labels or pseudo-labels; classes with no
    samples are excluded from the per-class averages (the divisor is the
    number of classes present, not the nominal class count).
    """
    z = embeddings.data
    n, _ = z.shape
    if n == 0:
        raise DataError("no samples")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise DataError(f"labels must have length {n}, got shape {y.shape}")
    c_total = embeddings.n_classes
    if y.min() < 0 or y.max() >= c_total:
        raise DataError("label out of range")

    counts = np.bincount(y, minlength=c_total)
    present = np.flatnonzero(counts)
    c_prime = present.size

    global_mean = z.mean(axis=0)
    # per-class sums via one scatter-add pass
    class_sums = np.zeros((c_total, z.shape[1]))
    np.add.at(class_sums, y, z)
    class_means = np.zeros_like(class_sums)
    class_means[present] = class_sums[present] / counts[present, None]

    sq_to_global = np.einsum("ij,ij->i", z - global_mean, z - global_mean)
    sq_to_class = np.einsum("ij,ij->i", z - class_means[y], z - class_means[y])

    per_class_total = np.zeros(c_total)
    per_class_intra = np.zeros(c_total)
    np.add.at(per_class_total, y, sq_to_global)
    np.add.at(per_class_intra, y, sq_to_class)

    total = float(np.sum(per_class_total[present] / counts[present]) / c_prime)
    intra = float(np.sum(per_class_intra[present] / counts[present]) / c_prime)
    diffs = class_means[present] - global_mean
    inter = float(np.einsum("ij,ij->", diffs, diffs) / c_prime)

    return VarianceReport(
        total=total,
        inter=inter,
        intra=intra,
        per_class_counts=counts,
        classes_present=c_prime,
    )


def decomposition_residual(report: VarianceReport) -> float:
    """Absolute defect of the total = inter + intra identity."""
    return abs(report.total - report.inter - report.intra)


def pearson_correlation(xs, ys) -> float:
    """Sample Pearson coefficient of two equal-length series."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError("series must be 1-D with equal lengths")
    if x.size < 2:
        raise DataError("need at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.dot(dx, dx)
    sy = np.dot(dy, dy)
    if sx == 0.0 or sy == 0.0:
        raise DataError("degenerate series")
    return float(np.dot(dx, dy) / np.sqrt(sx * sy))
