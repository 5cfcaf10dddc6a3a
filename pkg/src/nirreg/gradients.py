"""Patch-level gradient modeling, the inconsistency metric Q, EPE and curve fitting."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .image import PixelCoord

TWO_PI = 2.0 * np.pi

DEFAULT_PATCH_SIZE = 16
DEFAULT_BINS = 8


class PatchBoundsError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PatchGradient:
    """Dominant-bin gradient magnitude/orientation of one LxL patch."""

    g_m: float
    g_o: float
    patch_origin: PixelCoord
    size: int
    bins: int

    def __post_init__(self):
        if self.size < 2 or self.bins < 2:
            raise ConfigurationError("patch size and bin count must both be >= 2")
        if self.g_m < 0.0:
            raise ValueError("patch gradient magnitude must be non-negative")
        if not (0.0 < self.g_o <= TWO_PI + 1e-12):
            raise ValueError("patch orientation must lie in (0, 2pi]")


@dataclass(frozen=True)
class GradientDistribution:
    """Bivariate Gaussian fit of (G_m, G_o) samples."""

    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ValueError("expected 2-vector mean and 2x2 covariance")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-9:
            raise ValueError("covariance must be positive semi-definite")
        if self.sample_count < 2:
            raise InsufficientDataError("need at least 2 samples")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    def to_json(self):
        return {
            "mean": self.mean.tolist(),
            "covariance": self.covariance.tolist(),
            "sample_count": self.sample_count,
        }


@dataclass(frozen=True)
class InconsistencyCurve:
    """Binned mean EPE as a function of Q, with a least-squares trend slope."""

    bin_edges: np.ndarray
    mean_epe_per_bin: list
    count_per_bin: np.ndarray
    slope: float | None

    def to_json(self):
        return {
            "bin_edges": np.asarray(self.bin_edges).tolist(),
            "mean_epe_per_bin": [None if m is None else float(m) for m in self.mean_epe_per_bin],
            "count_per_bin": np.asarray(self.count_per_bin).tolist(),
            "slope": None if self.slope is None else float(self.slope),
        }


def orientation_bin_indices(orientation, bins):
    """Bin index in 1..K for angles in [0, 2pi): bin k covers ((k-1)*2pi/K, k*2pi/K].

    Orientation 0 belongs to bin K (wrap-around of the upper-inclusive edges).
    """
    o = np.asarray(orientation, dtype=float)
    idx = np.ceil(o * bins / TWO_PI).astype(int)
    idx[idx <= 0] = bins
    np.clip(idx, 1, bins, out=idx)
    return idx


def bin_magnitude_sums(magnitude, orientation, bins):
    """Sum of gradient magnitudes per orientation bin, index 0 holding bin 1."""
    idx = orientation_bin_indices(orientation, bins) - 1
    sums = np.bincount(idx.ravel(), weights=np.asarray(magnitude, dtype=float).ravel(),
                       minlength=bins)
    return sums


def patch_gradient(field, origin, size=DEFAULT_PATCH_SIZE, bins=DEFAULT_BINS):
    """Dominant orientation bin of an LxL window and its summed magnitude.

    Ties between bins resolve to the lowest bin index; the reported orientation
    is the winning bin's upper edge k*2pi/K.
    """
    if bins < 2:
        raise ConfigurationError("bin count must be >= 2")
    x0, y0 = int(round(origin.x)), int(round(origin.y))
    if x0 < 0 or y0 < 0 or x0 + size > field.width or y0 + size > field.height:
        raise PatchBoundsError(
            f"{size}x{size} patch at ({x0},{y0}) exceeds {field.width}x{field.height} field")
    mag = field.magnitude[y0:y0 + size, x0:x0 + size]
    ori = field.orientation[y0:y0 + size, x0:x0 + size]
    sums = bin_magnitude_sums(mag, ori, bins)
    k = int(np.argmax(sums)) + 1  # argmax takes the first maximum: lowest k wins ties
    return PatchGradient(float(sums[k - 1]), k * TWO_PI / bins,
                         PixelCoord(float(x0), float(y0)), size, bins)


def inconsistency_q(a, b):
    """Gradient inconsistency metric between two matched patches, in [0, 1].

    Q = [min(Gm)/max(Gm)] * [(cos|dGo| + 1)/2]. Both magnitudes zero gives a
    ratio term of 1; exactly one zero gives 0.
    """
    if a.size != b.size or a.bins != b.bins:
        raise ConfigurationError(
            f"patch configs differ: ({a.size},{a.bins}) vs ({b.size},{b.bins})")
    hi = max(a.g_m, b.g_m)
    lo = min(a.g_m, b.g_m)
    if hi == 0.0:
        ratio = 1.0
    elif lo == 0.0:
        ratio = 0.0
    else:
        ratio = lo / hi
    angular = (np.cos(abs(a.g_o - b.g_o)) + 1.0) / 2.0
    return float(np.clip(ratio * angular, 0.0, 1.0))


def fit_bivariate_gaussian(samples):
    """Sample mean and unbiased (n-1) covariance of (G_m, G_o) pairs."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("samples must be a list of (G_m, G_o) pairs")
    n = arr.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 samples, got {n}")
    mean = arr.mean(axis=0)
    cov = np.cov(arr, rowvar=False, ddof=1)
    cov = (cov + cov.T) / 2.0
    return GradientDistribution(mean, cov, n)


def epe(predicted, ground_truth):
    """Mean Euclidean distance between predicted and ground-truth points."""
    if len(predicted) == 0 or len(predicted) != len(ground_truth):
        raise ValueError(
            f"need equal-length non-empty lists, got {len(predicted)} and {len(ground_truth)}")
    p = np.array([[c.x, c.y] for c in predicted], dtype=float)
    g = np.array([[c.x, c.y] for c in ground_truth], dtype=float)
    return float(np.linalg.norm(p - g, axis=1).mean())


def bin_epe_by_q(matches, n_bins):
    """Equal-width Q bins over [0,1] with per-bin mean EPE and a linear trend slope.

    Q = 1 lands in the last bin. The slope is an unweighted least-squares fit of
    mean EPE against bin centers over non-empty bins; it is None with fewer than
    two non-empty bins.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    if len(matches) == 0:
        raise ValueError("no (Q, EPE) matches given")
    q = np.array([m[0] for m in matches], dtype=float)
    e = np.array([m[1] for m in matches], dtype=float)
    if q.min() < 0.0 or q.max() > 1.0:
        raise ValueError("Q values must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.minimum((q * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    means = []
    for k in range(n_bins):
        means.append(float(e[idx == k].mean()) if counts[k] > 0 else None)
    centers = (edges[:-1] + edges[1:]) / 2.0
    filled = [k for k in range(n_bins) if counts[k] > 0]
    if len(filled) >= 2:
        slope = float(np.polyfit(centers[filled], [means[k] for k in filled], 1)[0])
    else:
        slope = None
    return InconsistencyCurve(edges, means, counts, slope)


def write_q_epe_csv(rows, path):
    """Write per-match (Q, EPE) rows to a CSV file."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["q", "epe"])
        for q, e in rows:
            writer.writerow([repr(float(q)), repr(float(e))])


def write_json(obj, path):
    with open(path, "w") as f:
        json.dump(obj.to_json() if hasattr(obj, "to_json") else obj, f, indent=2, sort_keys=True)
        f.write("\n")
