"""Sparsity, accuracy, magnitude-bucket, sign-change and histogram reports.

Sparsity counts bit-exact zeros: the splitting optimizer produces literal
zeros by thresholding, and an epsilon would blur the distinction between
a thresholded model and one whose weights merely drifted small.  Buckets
and histograms first normalize weights to unit sup norm so that scale
thresholds read as relative magnitudes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BUCKET_SCALES = (2, 3, 4, 5, 10)
GAP_EPS = 1e-12


@dataclass(frozen=True)
class SparsityReport:
    layer: str
    zero_fraction: float
    buckets: dict          # scale exponent n -> fraction with |w|/max < 10^-n
    gap_indicator: float   # bucket(10) / max(bucket(4), eps)


@dataclass(frozen=True)
class SignChangeReport:
    layer: str
    changed: int
    total: int

    @property
    def percent(self) -> float:
        return 100.0 * self.changed / self.total


def sparsity(weights) -> float:
    """Fraction of entries exactly equal to zero."""
    arr = np.asarray(weights)
    if arr.size == 0:
        raise ValueError("sparsity of an empty tensor is undefined")
    return float(np.count_nonzero(arr == 0) / arr.size)


def sparsity_buckets(weights, scales=BUCKET_SCALES, layer: str = "") -> SparsityReport:
    """Fractions of sup-normalized weights below each 10^-n threshold."""
    arr = np.asarray(weights, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot bucket an empty tensor")
    peak = np.abs(arr).max()
    if peak == 0:
        raise ValueError("cannot normalize an all-zero tensor")
    mags = np.abs(arr) / peak
    buckets = {int(n): float(np.count_nonzero(mags < 10.0 ** (-n)) / arr.size) for n in scales}
    gap = buckets.get(10, 0.0) / max(buckets.get(4, 0.0), GAP_EPS)
    return SparsityReport(layer, sparsity(arr), buckets, gap)


def sign_changes(initial, final, layer: str = "") -> SignChangeReport:
    """Count entries whose sign flipped between two snapshots.

    Exact zeros on either side count as unchanged; percentage is over all
    entries.
    """
    a = np.asarray(initial)
    b = np.asarray(final)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    changed = int(np.count_nonzero((np.sign(a) != np.sign(b)) & (a != 0) & (b != 0)))
    return SignChangeReport(layer, changed, a.size)


def accuracy(model, data, chunk: int = 32) -> float:
    """Fraction of samples whose argmax logit matches the label.

    Ties break toward the lower class index (argmax convention).
    """
    X, y = data
    n = len(y)
    if n == 0:
        raise ValueError("cannot score an empty dataset")
    correct = 0
    for start in range(0, n, chunk):
        logits = model.forward(X[start : start + chunk])
        correct += int((logits.argmax(axis=1) == y[start : start + chunk]).sum())
    return correct / n


def weight_histogram(weights, bins: int = 101):
    """Equal-width histogram over [-1, 1] after sup-norm scaling.

    Returns (bin_centers, counts); counts sum to the tensor size.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    arr = np.asarray(weights, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("cannot histogram an empty tensor")
    peak = np.abs(arr).max()
    if peak == 0:
        raise ValueError("cannot normalize an all-zero tensor")
    counts, edges = np.histogram(arr / peak, bins=bins, range=(-1.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, counts
