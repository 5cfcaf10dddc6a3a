"""Grid keypoints, gradient-histogram descriptors, mutual-NN matching and the
dual-softmax / ground-truth coarse matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import apply_many, invert
from .gradients import DEFAULT_BINS, orientation_bin_indices
from .image import PixelCoord

SPATIAL_CELLS = 4  # descriptors use a 4x4 cell layout

DEFAULT_CELL = 16
DEFAULT_TEMPERATURE = 0.1
DEFAULT_RATIO = 0.8


class DescriptorBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint:
    position: PixelCoord
    scale: int
    response: float = 1.0

    def __post_init__(self):
        if self.scale < 4:
            raise ValueError("keypoint scale must be >= 4")

    @property
    def origin(self):
        """Top-left corner of the patch window."""
        return (int(round(self.position.x - self.scale / 2.0)),
                int(round(self.position.y - self.scale / 2.0)))


@dataclass(frozen=True)
class MatchSet:
    """One-to-one index matches with confidences and resolved coordinates."""

    pairs: list  # (index_a, index_b, confidence)
    points_a: list  # PixelCoord per pair
    points_b: list

    def __len__(self):
        return len(self.pairs)

    def to_json(self):
        return [{"a": [pa.x, pa.y], "b": [pb.x, pb.y], "conf": conf}
                for (_, _, conf), pa, pb in zip(self.pairs, self.points_a, self.points_b)]


def detect_grid_keypoints(img, stride, scale):
    """Regular grid of patch keypoints; empty when no patch fits."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    kps = []
    for y0 in range(0, img.height - scale + 1, stride):
        for x0 in range(0, img.width - scale + 1, stride):
            kps.append(Keypoint(PixelCoord(x0 + scale / 2.0, y0 + scale / 2.0), scale))
    return kps


def extract_descriptor(field, kp, bins=DEFAULT_BINS):
    """4x4-cell magnitude-weighted orientation histogram, L2-normalized.

    A patch with no gradient energy maps to the uniform unit vector so the
    descriptor norm is always 1.
    """
    x0, y0 = kp.origin
    s = kp.scale
    if x0 < 0 or y0 < 0 or x0 + s > field.width or y0 + s > field.height:
        raise DescriptorBoundsError(
            f"patch at ({x0},{y0}) size {s} exceeds {field.width}x{field.height} field")
    mag = field.magnitude[y0:y0 + s, x0:x0 + s]
    idx = orientation_bin_indices(field.orientation[y0:y0 + s, x0:x0 + s], bins) - 1
    cell_rows = np.array_split(np.arange(s), SPATIAL_CELLS)
    hist = np.zeros((SPATIAL_CELLS, SPATIAL_CELLS, bins))
    for ci, rows in enumerate(cell_rows):
        for cj, cols in enumerate(cell_rows):
            sub_m = mag[np.ix_(rows, cols)]
            sub_i = idx[np.ix_(rows, cols)]
            hist[ci, cj] = np.bincount(sub_i.ravel(), weights=sub_m.ravel(), minlength=bins)
    vec = hist.ravel()
    norm = np.linalg.norm(vec)
    if norm < 1e-12:
        return np.full(vec.size, 1.0 / np.sqrt(vec.size))
    return vec / norm


def extract_descriptors(field, keypoints, bins=DEFAULT_BINS):
    if not keypoints:
        return np.zeros((0, SPATIAL_CELLS * SPATIAL_CELLS * bins))
    return np.stack([extract_descriptor(field, kp, bins) for kp in keypoints])


def match_mutual_nn(desc_a, desc_b, kps_a=None, kps_b=None, ratio=DEFAULT_RATIO,
                    max_displacement=None):
    """Mutual nearest neighbors with Lowe ratio test.

    Keeps (i, j) when j is i's nearest B-descriptor, i is j's nearest
    A-descriptor, and d1/d2 <= ratio (kept when no second neighbor exists).
    Confidence is 1 - d1/2 clamped to [0, 1]. An optional max_displacement
    (requires keypoints) restricts candidates to spatially plausible pairs,
    for matching images that are already coarsely aligned.
    """
    if not (0.0 < ratio <= 1.0):
        raise ValueError("ratio must be in (0, 1]")
    a = np.asarray(desc_a, dtype=float)
    b = np.asarray(desc_b, dtype=float)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return MatchSet([], [], [])
    d2 = np.maximum(
        (a * a).sum(1)[:, None] - 2.0 * a @ b.T + (b * b).sum(1)[None, :], 0.0)
    dist = np.sqrt(d2)
    if max_displacement is not None:
        if kps_a is None or kps_b is None:
            raise ValueError("max_displacement filtering requires keypoints")
        pa = np.array([[k.position.x, k.position.y] for k in kps_a])
        pb = np.array([[k.position.x, k.position.y] for k in kps_b])
        offset = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
        dist = np.where(offset <= max_displacement, dist, np.inf)
    nn_ab = dist.argmin(axis=1)
    nn_ba = dist.argmin(axis=0)
    pairs, pts_a, pts_b = [], [], []
    for i, j in enumerate(nn_ab):
        if nn_ba[j] != i:
            continue
        d1 = dist[i, j]
        if not np.isfinite(d1):
            continue
        if b.shape[0] > 1:
            row = dist[i].copy()
            row[j] = np.inf
            d2nd = row.min()
            if d2nd > 0.0 and d1 / d2nd > ratio:
                continue
            if d2nd == 0.0:  # equidistant duplicates: ratio is 1, fails any ratio < 1
                if ratio < 1.0:
                    continue
        conf = float(np.clip(1.0 - d1 / 2.0, 0.0, 1.0))
        pairs.append((int(i), int(j), conf))
        pts_a.append(kps_a[i].position if kps_a else None)
        pts_b.append(kps_b[j].position if kps_b else None)
    return MatchSet(pairs, pts_a, pts_b)


def dual_softmax(similarity, temperature=DEFAULT_TEMPERATURE):
    """Entrywise product of row-wise and column-wise softmaxes of S / tau."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    s = np.asarray(similarity, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("similarity matrix must be finite")
    s = s / temperature
    row = np.exp(s - s.max(axis=1, keepdims=True))
    row /= row.sum(axis=1, keepdims=True)
    col = np.exp(s - s.max(axis=0, keepdims=True))
    col /= col.sum(axis=0, keepdims=True)
    return row * col


def build_gt_matrix(h_gt, centers_a, centers_b, image_b_size):
    """LoFTR-style ground-truth cells: mutual nearest grid centers under h_gt.

    A pair (i, j) is kept when warping A-center i lands nearest to B-center j,
    warping B-center j back lands nearest to A-center i, and the forward warp
    stays inside image B. Exact distance ties are excluded.
    """
    if not centers_a or not centers_b:
        return set()
    pa = np.array([[c.x, c.y] for c in centers_a], dtype=float)
    pb = np.array([[c.x, c.y] for c in centers_b], dtype=float)
    wa = apply_many(h_gt, pa)
    wb = apply_many(invert(h_gt), pb)
    w, h = image_b_size

    def nearest(warped, targets):
        d = np.linalg.norm(warped[:, None, :] - targets[None, :, :], axis=2)
        best = d.argmin(axis=1)
        tied = (d == d[np.arange(len(warped)), best][:, None]).sum(axis=1) > 1
        return best, tied

    na, tie_a = nearest(wa, pb)
    nb, tie_b = nearest(wb, pa)
    gt = set()
    for i in range(len(pa)):
        if tie_a[i] or not np.all(np.isfinite(wa[i])):
            continue
        if not (0.0 <= wa[i, 0] <= w - 1.0 and 0.0 <= wa[i, 1] <= h - 1.0):
            continue
        j = int(na[i])
        if tie_b[j] or int(nb[j]) != i:
            continue
        gt.add((i, j))
    return gt


def score_matrix_to_json(matrix):
    m = np.asarray(matrix, dtype=float)
    return {"shape": list(m.shape), "data": m.ravel().tolist()}
