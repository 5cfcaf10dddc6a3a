"""Homography algebra, normalized DLT, RANSAC and corner-error metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .image import PixelCoord


class SingularHomographyError(ValueError):
    pass


class DegeneratePointError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


class NoConsensusError(RuntimeError):
    pass


@dataclass(frozen=True)
class Homography:
    """3x3 projective map, normalized so m[2,2] = 1 (unit Frobenius norm if zero)."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ValueError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) > 1e-12:
            m = m / m[2, 2]
        else:
            m = m / np.linalg.norm(m)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise SingularHomographyError("homography matrix is numerically singular")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx, ty):
        m = np.eye(3)
        m[0, 2] = tx
        m[1, 2] = ty
        return cls(m)

    @classmethod
    def scaling(cls, sx, sy=None):
        sy = sx if sy is None else sy
        return cls(np.diag([float(sx), float(sy), 1.0]))

    def to_flat(self):
        """Row-major 9-number serialization."""
        return [float(v) for v in self.m.ravel()]

    @classmethod
    def from_flat(cls, values):
        arr = np.asarray(values, dtype=float)
        if arr.shape != (9,):
            raise ValueError("expected 9 row-major entries")
        return cls(arr.reshape(3, 3))


@dataclass(frozen=True)
class Correspondence:
    src: PixelCoord
    dst: PixelCoord
    weight: float | None = None

    def __post_init__(self):
        if self.weight is not None and not (0.0 <= self.weight <= 1.0):
            raise ValueError("correspondence weight must be in [0, 1]")

    def to_json(self):
        d = {"src": [self.src.x, self.src.y], "dst": [self.dst.x, self.dst.y]}
        if self.weight is not None:
            d["weight"] = self.weight
        return d

    @classmethod
    def from_json(cls, d):
        return cls(PixelCoord(*d["src"]), PixelCoord(*d["dst"]), d.get("weight"))


@dataclass(frozen=True)
class RansacResult:
    model: Homography
    inlier_mask: np.ndarray
    iterations_used: int
    inlier_rms: float

    def __post_init__(self):
        mask = np.asarray(self.inlier_mask, dtype=bool)
        if mask.sum() < 4:
            raise ValueError("RANSAC result requires at least 4 inliers")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "inlier_mask", mask)


def apply(h, p):
    """Project a point through the homography with homogeneous division."""
    v = h.m @ np.array([p.x, p.y, 1.0])
    if abs(v[2]) <= 1e-12:
        raise DegeneratePointError(f"point ({p.x}, {p.y}) maps to the line at infinity")
    return PixelCoord(v[0] / v[2], v[1] / v[2])


def apply_many(h, pts):
    """Vectorized projection of an (n,2) array; rows with |w| <= 1e-12 become inf."""
    pts = np.asarray(pts, dtype=float)
    ph = np.hstack([pts, np.ones((pts.shape[0], 1))])
    q = ph @ h.m.T
    w = q[:, 2]
    out = np.full((pts.shape[0], 2), np.inf)
    ok = np.abs(w) > 1e-12
    out[ok] = q[ok, :2] / w[ok, None]
    return out


def compose(outer, inner):
    """Homography acting as inner first, then outer."""
    return Homography(outer.m @ inner.m)


def invert(h):
    return Homography(np.linalg.inv(h.m))


def _normalizing_transform(pts):
    """Hartley transform: centroid to origin, RMS distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(((pts - centroid) ** 2).sum(axis=1).mean())
    if rms < 1e-12:
        raise RankDeficiencyError("all points coincide")
    s = np.sqrt(2.0) / rms
    t = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return t


def estimate_dlt(corrs):
    """Normalized direct linear transform over >= 4 correspondences."""
    if len(corrs) < 4:
        raise RankDeficiencyError(f"DLT needs at least 4 correspondences, got {len(corrs)}")
    src = np.array([[c.src.x, c.src.y] for c in corrs], dtype=float)
    dst = np.array([[c.dst.x, c.dst.y] for c in corrs], dtype=float)
    t_src = _normalizing_transform(src)
    t_dst = _normalizing_transform(dst)
    sn = (np.hstack([src, np.ones((len(src), 1))]) @ t_src.T)[:, :2]
    dn = (np.hstack([dst, np.ones((len(dst), 1))]) @ t_dst.T)[:, :2]
    n = len(corrs)
    a = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    a[0::2, 0] = x
    a[0::2, 1] = y
    a[0::2, 2] = 1.0
    a[0::2, 6] = -u * x
    a[0::2, 7] = -u * y
    a[0::2, 8] = -u
    a[1::2, 3] = x
    a[1::2, 4] = y
    a[1::2, 5] = 1.0
    a[1::2, 6] = -v * x
    a[1::2, 7] = -v * y
    a[1::2, 8] = -v
    _, sv, vt = np.linalg.svd(a)
    if sv[7] <= 1e-9 * max(sv[0], 1.0):
        raise RankDeficiencyError("degenerate (collinear or coincident) point configuration")
    hn = vt[-1].reshape(3, 3)
    try:
        return Homography(np.linalg.inv(t_dst) @ hn @ t_src)
    except SingularHomographyError:
        raise RankDeficiencyError("DLT produced a singular homography") from None


def reprojection_errors(h, corrs):
    """Forward transfer distance |h(src) - dst| for every correspondence."""
    src = np.array([[c.src.x, c.src.y] for c in corrs], dtype=float)
    dst = np.array([[c.dst.x, c.dst.y] for c in corrs], dtype=float)
    proj = apply_many(h, src)
    return np.linalg.norm(proj - dst, axis=1)


def estimate_ransac(corrs, threshold=3.0, max_iters=2000, confidence=0.995, seed=0):
    """Seed-deterministic RANSAC homography with DLT refit on the best inlier set.

    Inlier test is forward transfer distance <= threshold; iteration count adapts
    to the requested confidence.
    """
    n = len(corrs)
    if n < 4:
        raise NoConsensusError(f"RANSAC needs at least 4 correspondences, got {n}")
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = 0
    best_rms = np.inf
    needed = max_iters
    it = 0
    while it < min(max_iters, needed):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        try:
            h = estimate_dlt([corrs[i] for i in idx])
        except (RankDeficiencyError, SingularHomographyError):
            continue
        err = reprojection_errors(h, corrs)
        mask = err <= threshold
        count = int(mask.sum())
        if count < 4:
            continue
        rms = float(np.sqrt((err[mask] ** 2).mean()))
        if count > best_count or (count == best_count and rms < best_rms):
            best_mask = mask
            best_count = count
            best_rms = rms
            w = count / n
            if w >= 1.0:
                needed = it
            else:
                needed = int(np.ceil(np.log(1.0 - confidence) / np.log(1.0 - w ** 4)))
    if best_mask is None:
        raise NoConsensusError("no hypothesis with at least 4 inliers")
    try:
        model = estimate_dlt([c for c, keep in zip(corrs, best_mask) if keep])
    except (RankDeficiencyError, SingularHomographyError):
        raise NoConsensusError("inlier refit failed on a degenerate configuration") from None
    err = reprojection_errors(model, corrs)
    mask = err <= threshold
    if mask.sum() < 4:
        mask = best_mask  # refit drifted; keep the consensus of the best hypothesis
        err_in = reprojection_errors(model, [c for c, k in zip(corrs, best_mask) if k])
        rms = float(np.sqrt((err_in ** 2).mean()))
        if rms > threshold:
            raise NoConsensusError("refit model lost the consensus set")
    else:
        rms = float(np.sqrt((err[mask] ** 2).mean()))
    return RansacResult(model, mask, it, rms)


def corner_error(h_est, h_gt, width, height):
    """Mean displacement of the four image corners under estimated vs true map."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    corners = np.array([[0.0, 0.0], [width - 1.0, 0.0],
                        [0.0, height - 1.0], [width - 1.0, height - 1.0]])
    pe = apply_many(h_est, corners)
    pg = apply_many(h_gt, corners)
    if not (np.all(np.isfinite(pe)) and np.all(np.isfinite(pg))):
        raise DegeneratePointError("a corner maps to the line at infinity")
    return float(np.linalg.norm(pe - pg, axis=1).mean())


def auc_corner_error(errors, threshold):
    """Percent area under the empirical error CDF up to the threshold.

    Exact step-function integration; +inf entries model failed estimations.
    """
    if len(errors) == 0:
        raise ValueError("empty error list")
    if threshold <= 0.0:
        raise ValueError("threshold must be positive")
    e = np.asarray(errors, dtype=float)
    if np.any(e < 0.0) or np.any(np.isnan(e)):
        raise ValueError("errors must be non-negative")
    n = len(e)
    steps = np.sort(e[e < threshold])
    # integral of the step CDF: each sorted error e_(i) raises F by 1/n from e_(i) to t
    area = float(((threshold - steps) / n).sum())
    return 100.0 * area / threshold
