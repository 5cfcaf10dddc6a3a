"""IRAP annotation workflow: human-seeded H1, algorithmic residual H2, ground-truth
composition, cross-modality transfer, pseudo-NIR synthesis and the dataset manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import geometry, matcher
from .geometry import Correspondence, Homography, RansacResult
from .image import Image, PixelCoord, compute_gradient_field, rgb_to_gray

MANIFEST_VERSION = "1"

STATUS_ORDER = {"draft": 0, "refined": 1, "accepted": 2}
STATUSES = ("draft", "refined", "accepted", "rejected")


class AnnotationStateError(RuntimeError):
    pass


class ManifestVersionError(ValueError):
    pass


@dataclass(frozen=True)
class MatcherConfig:
    stride: int = 8
    scale: int = 16
    bins: int = 8
    ratio: float = 0.9
    # residual matching only: candidate radius in px (H1 coarse-aligns the pair)
    residual_max_displacement: float = 16.0


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 3.0
    max_iters: int = 2000
    confidence: float = 0.995
    seed: int = 0


@dataclass
class Quadruplet:
    """Two pixel-aligned RGB-NIR pairs of one scene from two viewpoints."""

    id: str
    a_rgb: str
    a_nir: str
    b_rgb: str
    b_nir: str
    scene: str = ""
    illumination: str = ""

    def image_paths(self):
        return {"a_rgb": self.a_rgb, "a_nir": self.a_nir,
                "b_rgb": self.b_rgb, "b_nir": self.b_nir}


@dataclass
class AnnotationRecord:
    quadruplet_id: str
    h1: Homography | None = None
    h2: Homography | None = None
    h_gt: Homography | None = None
    click_pairs: list = field(default_factory=list)
    residual_inlier_count: int = 0
    status: str = "draft"

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status in ("refined", "accepted") and self.h_gt is None:
            raise ValueError(f"{self.status} record requires h_gt")
        if self.status == "accepted" and self.residual_inlier_count < 4:
            raise ValueError("accepted record requires >= 4 residual inliers")


@dataclass
class Scene:
    name: str
    illumination: str = ""
    quadruplets: list = field(default_factory=list)  # (Quadruplet, AnnotationRecord)


@dataclass
class DatasetManifest:
    scenes: list = field(default_factory=list)
    version: str = MANIFEST_VERSION

    def records(self):
        for scene in self.scenes:
            for quad, record in scene.quadruplets:
                yield scene, quad, record


def warp_image(img, h, out_size=None):
    """Warp by inverse bilinear sampling; out-of-bounds pixels become 0."""
    if out_size is None:
        out_size = (img.width, img.height)
    w, hgt = out_size
    hinv = geometry.invert(h).m
    ys, xs = np.mgrid[0:hgt, 0:w]
    pts = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    q = hinv @ pts
    with np.errstate(divide="ignore", invalid="ignore"):
        sx = q[0] / q[2]
        sy = q[1] / q[2]
    bad = np.abs(q[2]) <= 1e-12
    sx[bad] = -1.0
    sy[bad] = -1.0
    data = np.asarray(img.data, dtype=float)
    if data.ndim == 2:
        data = data[:, :, None]
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx = sx - x0
    fy = sy - y0
    out = np.zeros((hgt * w, data.shape[2]))
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < img.width) & (yi >= 0) & (yi < img.height)
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            out[ok] += weight[ok, None] * data[yi[ok], xi[ok]]
    out = out.reshape(hgt, w, data.shape[2])
    if img.channels == 1:
        out = out[:, :, 0]
    return Image(np.clip(out, 0.0, 1.0))


def seed_homography(clicks):
    """Estimate the human-seed homography H1 from click pairs.

    Returns (H1, per-click reprojection residuals in pixels). With 5 or more
    clicks each residual is computed leave-one-out, against the fit of the
    remaining clicks, so a single bad click is flagged instead of being
    absorbed by the least-squares fit.
    """
    if len(clicks) < 4:
        raise geometry.RankDeficiencyError(
            f"need at least 4 click pairs, got {len(clicks)}")
    h1 = geometry.estimate_dlt(clicks)
    model_residuals = geometry.reprojection_errors(h1, clicks)
    residuals = []
    for i, click in enumerate(clicks):
        if len(clicks) < 5:
            residuals.append(float(model_residuals[i]))
            continue
        rest = clicks[:i] + clicks[i + 1:]
        try:
            h_loo = geometry.estimate_dlt(rest)
            residuals.append(float(geometry.reprojection_errors(h_loo, [click])[0]))
        except geometry.RankDeficiencyError:
            residuals.append(float(model_residuals[i]))
    return h1, residuals


def _refine_match_offset(patch, search):
    """Best integer offset of patch inside the search window by SSD, with
    parabolic sub-pixel interpolation around the minimum."""
    win = np.lib.stride_tricks.sliding_window_view(search, patch.shape)
    ssd = ((win - patch) ** 2).sum(axis=(2, 3))
    iy, ix = np.unravel_index(np.argmin(ssd), ssd.shape)

    def subpixel(vals, i, n):
        if 0 < i < n - 1:
            denom = vals[i - 1] - 2.0 * vals[i] + vals[i + 1]
            if denom > 1e-12:
                return 0.5 * (vals[i - 1] - vals[i + 1]) / denom
        return 0.0

    dy = subpixel(ssd[:, ix], iy, ssd.shape[0])
    dx = subpixel(ssd[iy, :], ix, ssd.shape[1])
    return ix + dx, iy + dy


def refine_matches_locally(img_a, img_b, matches, scale, radius):
    """Snap grid-to-grid matches to the local SSD optimum in B.

    Grid matching only resolves displacements to the stride; the local search
    recovers the sub-stride (and sub-pixel) part of the residual.
    """
    data_a = np.asarray(img_a.data, dtype=float)
    data_b = np.asarray(img_b.data, dtype=float)
    half = scale // 2
    refined = []
    for pa, pb in matches:
        ax, ay = int(round(pa.x - half)), int(round(pa.y - half))
        bx, by = int(round(pb.x - half)), int(round(pb.y - half))
        sx, sy = bx - radius, by - radius
        if ax < 0 or ay < 0 or ax + scale > img_a.width or ay + scale > img_a.height \
                or sx < 0 or sy < 0 or sx + scale + 2 * radius > img_b.width \
                or sy + scale + 2 * radius > img_b.height:
            refined.append((pa, pb))
            continue
        patch = data_a[ay:ay + scale, ax:ax + scale]
        search = data_b[sy:sy + scale + 2 * radius, sx:sx + scale + 2 * radius]
        ox, oy = _refine_match_offset(patch, search)
        refined.append((pa, PixelCoord(sx + ox + half, sy + oy + half)))
    return refined


def refine_residual(a_rgb, b_rgb, h1, matcher_cfg=MatcherConfig(),
                    ransac_cfg=RansacConfig()):
    """Estimate the residual homography H2 in B's frame.

    a_rgb is warped by H1 into B's frame, matched against b_rgb (grid
    matches snapped to the local SSD optimum), and the match set is fed to
    RANSAC; p_B = H2(H1(p_A)) afterwards.
    """
    gray_a = rgb_to_gray(a_rgb) if a_rgb.channels == 3 else a_rgb
    gray_b = rgb_to_gray(b_rgb) if b_rgb.channels == 3 else b_rgb
    warped = warp_image(gray_a, h1, (gray_b.width, gray_b.height))
    field_a = compute_gradient_field(warped)
    field_b = compute_gradient_field(gray_b)
    kps_a = matcher.detect_grid_keypoints(warped, matcher_cfg.stride, matcher_cfg.scale)
    kps_b = matcher.detect_grid_keypoints(gray_b, matcher_cfg.stride, matcher_cfg.scale)
    desc_a = matcher.extract_descriptors(field_a, kps_a, matcher_cfg.bins)
    desc_b = matcher.extract_descriptors(field_b, kps_b, matcher_cfg.bins)
    matches = matcher.match_mutual_nn(
        desc_a, desc_b, kps_a, kps_b, matcher_cfg.ratio,
        max_displacement=matcher_cfg.residual_max_displacement)
    confs = [conf for (_, _, conf) in matches.pairs]
    pairs = refine_matches_locally(
        warped, gray_b, list(zip(matches.points_a, matches.points_b)),
        matcher_cfg.scale, matcher_cfg.stride)
    corrs = [Correspondence(pa, pb, conf)
             for (pa, pb), conf in zip(pairs, confs)]
    if len(corrs) < 4:
        raise geometry.NoConsensusError(
            f"only {len(corrs)} matches between warped A and B; cannot refine")
    result = geometry.estimate_ransac(corrs, ransac_cfg.threshold, ransac_cfg.max_iters,
                                      ransac_cfg.confidence, ransac_cfg.seed)
    return result.model, result


def compose_gt(h2, h1):
    """Ground-truth homography acting H1 first, then the residual H2."""
    return geometry.compose(h2, h1)


def transfer_cross_modality(record):
    """Derive the four cross-view pair annotations sharing the record's h_gt.

    Pixel-wise RGB-NIR alignment makes the same homography exact for every
    modality combination.
    """
    if record.status == "rejected":
        raise AnnotationStateError("rejected record has no ground truth to transfer")
    if STATUS_ORDER.get(record.status, -1) < STATUS_ORDER["refined"]:
        raise AnnotationStateError(f"record status {record.status!r} is not refined yet")
    kinds = [("a_rgb", "b_rgb"), ("a_nir", "b_nir"), ("a_rgb", "b_nir"), ("a_nir", "b_rgb")]
    return [{"quadruplet_id": record.quadruplet_id, "src": s, "dst": d,
             "h_gt": record.h_gt} for s, d in kinds]


def synthesize_pseudo_nir(img, region_map, seed, ops=None):
    """Per-region intensity remap mimicking cross-spectral appearance changes.

    Each region gets either a gamma curve with exponent in [0.5, 2] or the
    inversion 1 - v, chosen by the seeded generator; an explicit ops mapping
    {region_id: ("gamma", g) | ("invert",)} overrides the draw.
    """
    ids = np.asarray(region_map.class_ids).reshape(img.height, img.width)
    if ids.shape != (img.height, img.width):
        raise ValueError("region map does not cover the image grid")
    rng = np.random.default_rng(seed)
    data = np.asarray(img.data, dtype=float).copy()
    for region in np.unique(ids):
        if ops is not None and int(region) in ops:
            op = ops[int(region)]
        elif rng.random() < 0.5:
            op = ("invert",)
        else:
            op = ("gamma", float(rng.uniform(0.5, 2.0)))
        mask = ids == region
        if op[0] == "invert":
            data[mask] = 1.0 - data[mask]
        else:
            data[mask] = np.power(data[mask], op[1])
    return Image(np.clip(data, 0.0, 1.0))


def _record_to_json(record):
    return {
        "quadruplet_id": record.quadruplet_id,
        "h1": None if record.h1 is None else record.h1.to_flat(),
        "h2": None if record.h2 is None else record.h2.to_flat(),
        "h_gt": None if record.h_gt is None else record.h_gt.to_flat(),
        "clicks": [c.to_json() for c in record.click_pairs],
        "residual_inlier_count": record.residual_inlier_count,
        "status": record.status,
    }


def _record_from_json(d):
    def h(v):
        return None if v is None else Homography.from_flat(v)

    return AnnotationRecord(
        quadruplet_id=d["quadruplet_id"],
        h1=h(d.get("h1")), h2=h(d.get("h2")), h_gt=h(d.get("h_gt")),
        click_pairs=[Correspondence.from_json(c) for c in d.get("clicks", [])],
        residual_inlier_count=d.get("residual_inlier_count", 0),
        status=d.get("status", "draft"),
    )


def manifest_to_json(manifest):
    return {
        "version": manifest.version,
        "scenes": [
            {
                "name": scene.name,
                "illumination": scene.illumination,
                "quadruplets": [
                    {"id": quad.id, "images": quad.image_paths(),
                     "record": _record_to_json(record)}
                    for quad, record in scene.quadruplets
                ],
            }
            for scene in manifest.scenes
        ],
    }


def manifest_from_json(d):
    version = d.get("version")
    if version != MANIFEST_VERSION:
        raise ManifestVersionError(f"unsupported manifest version {version!r}")
    scenes = []
    for s in d["scenes"]:
        quads = []
        for q in s["quadruplets"]:
            imgs = q["images"]
            quad = Quadruplet(q["id"], imgs["a_rgb"], imgs["a_nir"],
                              imgs["b_rgb"], imgs["b_nir"],
                              scene=s["name"], illumination=s.get("illumination", ""))
            quads.append((quad, _record_from_json(q["record"])))
        scenes.append(Scene(s["name"], s.get("illumination", ""), quads))
    return DatasetManifest(scenes, version)


def save_manifest(manifest, path):
    """Atomic write: serialize to a temp file, then rename over the target."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as f:
        json.dump(manifest_to_json(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    tmp.replace(path)


def load_manifest(path):
    with open(path) as f:
        return manifest_from_json(json.load(f))


def manifest_roundtrip(manifest):
    """Serialize and re-parse; homography entries survive to 1e-12."""
    return manifest_from_json(json.loads(json.dumps(manifest_to_json(manifest))))
