"""Evaluation protocol glue: synthetic dataset generation, the resize/match-cap
homography benchmark, and the gradient-inconsistency analysis over a manifest."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry, gradients, matcher, pipeline
from .geometry import Correspondence, Homography
from .image import Image, PixelCoord, load_image, rgb_to_gray, save_image, compute_gradient_field
from .pipeline import (DatasetManifest, AnnotationRecord, MatcherConfig, Quadruplet,
                       RansacConfig, Scene)


@dataclass(frozen=True)
class EvalProtocol:
    resize_shorter_side: int = 480
    max_matches: int = 1000
    auc_thresholds: tuple = (3.0, 5.0, 10.0)
    ransac: RansacConfig = field(default_factory=RansacConfig)

    def __post_init__(self):
        if self.resize_shorter_side < 1 or self.max_matches < 1:
            raise ValueError("protocol values must be positive")
        ts = tuple(float(t) for t in self.auc_thresholds)
        if any(b <= a for a, b in zip(ts, ts[1:])) or (ts and ts[0] <= 0):
            raise ValueError("thresholds must be strictly increasing and positive")
        object.__setattr__(self, "auc_thresholds", ts)

    def to_json(self):
        return {"resize_shorter_side": self.resize_shorter_side,
                "max_matches": self.max_matches,
                "auc_thresholds": list(self.auc_thresholds),
                "ransac": {"threshold": self.ransac.threshold,
                           "max_iters": self.ransac.max_iters,
                           "confidence": self.ransac.confidence,
                           "seed": self.ransac.seed}}


def make_block_region_map(width, height, blocks=4):
    """Semantic-style region map splitting the grid into blocks x blocks tiles."""
    from .semantic import SemanticLabelMap

    ys, xs = np.mgrid[0:height, 0:width]
    bi = np.minimum(ys * blocks // height, blocks - 1)
    bj = np.minimum(xs * blocks // width, blocks - 1)
    ids = (bi * blocks + bj + 1).ravel()
    return SemanticLabelMap(ids, np.ones(ids.size), blocks * blocks)


def random_bounded_homography(width, height, rng, max_corner_shift=0.25):
    """Random perspective map displacing each corner by at most the given
    fraction of the image side."""
    corners = np.array([[0.0, 0.0], [width - 1.0, 0.0],
                        [0.0, height - 1.0], [width - 1.0, height - 1.0]])
    side = min(width, height)
    shifts = rng.uniform(-max_corner_shift * side, max_corner_shift * side,
                         size=(4, 2))
    corrs = [Correspondence(PixelCoord(*c), PixelCoord(*(c + s)))
             for c, s in zip(corners, shifts)]
    return geometry.estimate_dlt(corrs), corrs


def synthesize_dataset(base_images, n_quadruplets, seed, out_dir, manifest_name="manifest.json"):
    """Generate a synthetic quadruplet dataset with exact planted homographies.

    Each quadruplet warps a base image by a seeded bounded-perspective map for
    the second viewpoint and derives pixel-aligned pseudo-NIR counterparts.
    Returns the manifest path.
    """
    if not base_images:
        raise ValueError("need at least one base image")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    img_dir = out_dir / "images"
    img_dir.mkdir(exist_ok=True)
    rng = np.random.default_rng(seed)
    quads = []
    for i in range(n_quadruplets):
        base = base_images[i % len(base_images)]
        gray = rgb_to_gray(base) if base.channels == 3 else base
        regions = make_block_region_map(gray.width, gray.height)
        h_gt, corner_corrs = random_bounded_homography(gray.width, gray.height, rng)
        a_rgb = gray
        a_nir = pipeline.synthesize_pseudo_nir(gray, regions, seed=int(rng.integers(2 ** 31)))
        b_rgb = pipeline.warp_image(a_rgb, h_gt)
        b_nir = pipeline.warp_image(a_nir, h_gt)
        qid = f"quad{i:03d}"
        names = {}
        for key, img in (("a_rgb", a_rgb), ("a_nir", a_nir),
                         ("b_rgb", b_rgb), ("b_nir", b_nir)):
            name = f"images/{qid}_{key}.pgm"
            save_image(img, out_dir / name)
            names[key] = name
        quad = Quadruplet(qid, names["a_rgb"], names["a_nir"],
                          names["b_rgb"], names["b_nir"], scene="synthetic")
        record = AnnotationRecord(
            quadruplet_id=qid, h1=h_gt, h2=Homography.identity(), h_gt=h_gt,
            click_pairs=corner_corrs, residual_inlier_count=len(corner_corrs),
            status="accepted")
        quads.append((quad, record))
    manifest = DatasetManifest([Scene("synthetic", "lab", quads)])
    manifest_path = out_dir / manifest_name
    pipeline.save_manifest(manifest, manifest_path)
    return manifest_path


def derive_eval_pairs(manifest, include_aligned=True):
    """Evaluation pairs from accepted records: pixel-aligned same-view pairs carry
    the identity homography ('aligned' split); cross-view pairs carry h_gt
    ('viewpoint' split)."""
    pairs = []
    for scene, quad, record in manifest.records():
        if record.status != "accepted":
            continue
        paths = quad.image_paths()
        if include_aligned:
            for s, d in (("a_rgb", "a_nir"), ("b_rgb", "b_nir")):
                pairs.append({"quadruplet_id": quad.id, "src": s, "dst": d,
                              "src_path": paths[s], "dst_path": paths[d],
                              "h_gt": Homography.identity(), "split": "aligned"})
        for ann in pipeline.transfer_cross_modality(record):
            pairs.append({"quadruplet_id": quad.id, "src": ann["src"], "dst": ann["dst"],
                          "src_path": paths[ann["src"]], "dst_path": paths[ann["dst"]],
                          "h_gt": ann["h_gt"], "split": "viewpoint"})
    return pairs


def resize_shorter_side(img, target):
    """Rescale so the shorter side equals the target, preserving aspect ratio.

    Returns (image, scale homography) so ground truth can be adjusted as
    h' = S_dst @ h @ inv(S_src)."""
    s = target / min(img.width, img.height)
    out_w = int(round(img.width * s))
    out_h = int(round(img.height * s))
    scale = Homography.scaling(s)
    if abs(s - 1.0) < 1e-12:
        return img, scale
    return pipeline.warp_image(img, scale, (out_w, out_h)), scale


def rescale_homography(h, scale_src, scale_dst):
    return geometry.compose(geometry.compose(scale_dst, h), geometry.invert(scale_src))


def _builtin_matches(img_a, img_b, cfg):
    field_a = compute_gradient_field(img_a)
    field_b = compute_gradient_field(img_b)
    kps_a = matcher.detect_grid_keypoints(img_a, cfg.stride, cfg.scale)
    kps_b = matcher.detect_grid_keypoints(img_b, cfg.stride, cfg.scale)
    desc_a = matcher.extract_descriptors(field_a, kps_a, cfg.bins)
    desc_b = matcher.extract_descriptors(field_b, kps_b, cfg.bins)
    ms = matcher.match_mutual_nn(desc_a, desc_b, kps_a, kps_b, cfg.ratio)
    return [Correspondence(pa, pb, conf)
            for (_, _, conf), pa, pb in zip(ms.pairs, ms.points_a, ms.points_b)]


def _oracle_matches(img_a, img_b, h_gt, cfg):
    """Ground-truth correspondences on the keypoint grid (perfect matcher)."""
    kps_a = matcher.detect_grid_keypoints(img_a, cfg.stride, cfg.scale)
    corrs = []
    for kp in kps_a:
        dst = geometry.apply(h_gt, kp.position)
        if 0.0 <= dst.x <= img_b.width - 1.0 and 0.0 <= dst.y <= img_b.height - 1.0:
            corrs.append(Correspondence(kp.position, dst, 1.0))
    return corrs


def _nn_predictions(field_a, field_b, img_a, img_b, cfg):
    """One predicted B-location per A-grid keypoint: the nearest-descriptor
    keypoint, with no mutual or ratio filtering.

    Used by the inconsistency analysis, which needs a prediction everywhere so
    failures in low-consistency regions are observed rather than filtered out.
    """
    kps_a = matcher.detect_grid_keypoints(img_a, cfg.stride, cfg.scale)
    kps_b = matcher.detect_grid_keypoints(img_b, cfg.stride, cfg.scale)
    if not kps_a or not kps_b:
        return []
    desc_a = matcher.extract_descriptors(field_a, kps_a, cfg.bins)
    desc_b = matcher.extract_descriptors(field_b, kps_b, cfg.bins)
    dist = np.linalg.norm(desc_a[:, None, :] - desc_b[None, :, :], axis=2)
    nn = dist.argmin(axis=1)
    return [(kp.position, kps_b[int(j)].position) for kp, j in zip(kps_a, nn)]


def cap_matches(corrs, max_matches):
    """Top matches by confidence; stable (confidence desc, index asc) order."""
    order = sorted(range(len(corrs)),
                   key=lambda i: (-(corrs[i].weight or 0.0), i))
    return [corrs[i] for i in order[:max_matches]]


def evaluate(manifest, manifest_dir, protocol=EvalProtocol(),
             matcher_cfg=MatcherConfig(), method="builtin"):
    """Run the homography benchmark over a manifest and report per-split AUC."""
    manifest_dir = Path(manifest_dir)
    pairs = derive_eval_pairs(manifest)
    if not pairs:
        raise ValueError("manifest has no accepted records to evaluate")
    results = []
    for pair in pairs:
        img_a = load_image(manifest_dir / pair["src_path"])
        img_b = load_image(manifest_dir / pair["dst_path"])
        if img_a.channels == 3:
            img_a = rgb_to_gray(img_a)
        if img_b.channels == 3:
            img_b = rgb_to_gray(img_b)
        img_a, scale_a = resize_shorter_side(img_a, protocol.resize_shorter_side)
        img_b, scale_b = resize_shorter_side(img_b, protocol.resize_shorter_side)
        h_gt = rescale_homography(pair["h_gt"], scale_a, scale_b)
        if method == "oracle":
            corrs = _oracle_matches(img_a, img_b, h_gt, matcher_cfg)
        else:
            corrs = _builtin_matches(img_a, img_b, matcher_cfg)
        corrs = cap_matches(corrs, protocol.max_matches)
        err = float("inf")
        if len(corrs) >= 4:
            try:
                result = geometry.estimate_ransac(
                    corrs, protocol.ransac.threshold, protocol.ransac.max_iters,
                    protocol.ransac.confidence, protocol.ransac.seed)
                err = geometry.corner_error(result.model, h_gt,
                                            img_a.width, img_a.height)
            except (geometry.NoConsensusError, geometry.DegeneratePointError):
                err = float("inf")
        results.append({"quadruplet_id": pair["quadruplet_id"], "src": pair["src"],
                        "dst": pair["dst"], "split": pair["split"],
                        "corner_error": err, "n_matches": len(corrs)})
    report = {"method": method, "protocol": protocol.to_json(), "pairs": results,
              "auc": {}}
    splits = sorted({r["split"] for r in results}) + ["overall"]
    for split in splits:
        errs = [r["corner_error"] for r in results
                if split == "overall" or r["split"] == split]
        if errs:
            report["auc"][split] = {
                f"{t:g}": geometry.auc_corner_error(errs, t)
                for t in protocol.auc_thresholds}
    return report


def report_to_json_bytes(report):
    """Canonical serialization used for byte-identical determinism checks."""
    def clean(v):
        if isinstance(v, float) and v == float("inf"):
            return "inf"
        return v

    def walk(obj):
        if isinstance(obj, dict):
            return {k: walk(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [walk(v) for v in obj]
        return clean(obj)

    return (json.dumps(walk(report), indent=2, sort_keys=True) + "\n").encode()


def format_report_table(report):
    lines = [f"method: {report['method']}  pairs: {len(report['pairs'])}"]
    thresholds = report["protocol"]["auc_thresholds"]
    header = "split".ljust(12) + "".join(f"AUC@{t:g}".rjust(10) for t in thresholds)
    lines.append(header)
    for split, aucs in report["auc"].items():
        lines.append(split.ljust(12)
                     + "".join(f"{aucs[f'{t:g}']:10.2f}" for t in thresholds))
    return "\n".join(lines)


def analyze(manifest, manifest_dir, patch_size=16, bins=8, n_curve_bins=10,
            matcher_cfg=MatcherConfig(), q_pairing="gt"):
    """Gradient-distribution fits per modality plus per-match (Q, EPE) rows and
    the binned inconsistency curve for the built-in matcher.

    q_pairing chooses where the destination patch for Q is taken: "gt" compares
    the source patch with the patch at its ground-truth location in the
    destination image (cross-modality consistency at the true scene point);
    "predicted" compares against the patch at the matcher's own prediction.
    The predicted pairing is biased upward for wrong matches, because the
    matcher picks gradient-similar patches by construction.
    """
    if q_pairing not in ("gt", "predicted"):
        raise ValueError("q_pairing must be 'gt' or 'predicted'")
    manifest_dir = Path(manifest_dir)
    pairs = derive_eval_pairs(manifest)
    if not pairs:
        raise ValueError("manifest has no accepted records to analyze")
    samples = {"rgb": [], "nir": []}
    rows = []
    cache = {}

    def fetch(rel):
        if rel not in cache:
            img = load_image(manifest_dir / rel)
            if img.channels == 3:
                img = rgb_to_gray(img)
            cache[rel] = (img, compute_gradient_field(img))
        return cache[rel]

    for pair in pairs:
        img_a, field_a = fetch(pair["src_path"])
        img_b, field_b = fetch(pair["dst_path"])
        for key, fld, img in (("src", field_a, img_a), ("dst", field_b, img_b)):
            modality = "nir" if pair[key].endswith("nir") else "rgb"
            for y0 in range(0, img.height - patch_size + 1, patch_size):
                for x0 in range(0, img.width - patch_size + 1, patch_size):
                    pg = gradients.patch_gradient(fld, PixelCoord(x0, y0),
                                                  patch_size, bins)
                    samples[modality].append((pg.g_m, pg.g_o))
        for src, dst in _nn_predictions(field_a, field_b, img_a, img_b,
                                        matcher_cfg):
            gt_dst = geometry.apply(pair["h_gt"], src)
            match_epe = float(np.hypot(dst.x - gt_dst.x, dst.y - gt_dst.y))
            q_dst = gt_dst if q_pairing == "gt" else dst
            try:
                pg_a = gradients.patch_gradient(
                    field_a, PixelCoord(round(src.x - patch_size / 2),
                                        round(src.y - patch_size / 2)),
                    patch_size, bins)
                pg_b = gradients.patch_gradient(
                    field_b, PixelCoord(round(q_dst.x - patch_size / 2),
                                        round(q_dst.y - patch_size / 2)),
                    patch_size, bins)
            except gradients.PatchBoundsError:
                continue
            rows.append((gradients.inconsistency_q(pg_a, pg_b), match_epe))
    out = {"distributions": {}, "rows": rows, "curve": None}
    for modality, pts in samples.items():
        if len(pts) >= 2:
            out["distributions"][modality] = gradients.fit_bivariate_gaussian(pts)
    if rows:
        out["curve"] = gradients.bin_epe_by_q(rows, n_curve_bins)
    return out


def write_analysis(result, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for modality, dist in result["distributions"].items():
        gradients.write_json(dist, out_dir / f"distribution_{modality}.json")
    gradients.write_q_epe_csv(result["rows"], out_dir / "q_epe.csv")
    if result["curve"] is not None:
        gradients.write_json(result["curve"], out_dir / "curve.json")
