"""Command-line entry points: analyze, evaluate, synthesize and serve."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import evaluation, pipeline
from .image import ImageError, load_image
from .pipeline import MatcherConfig, RansacConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MISSING = 2
EXIT_NO_RECORDS = 3
EXIT_PORT = 4

log = logging.getLogger("nirreg")


def _setup_logging():
    level = os.environ.get("IRAP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_manifest(path):
    path = Path(path)
    if not path.is_file():
        print(f"error: manifest not found: {path}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING)
    try:
        return pipeline.load_manifest(path), path.parent
    except (pipeline.ManifestVersionError, ValueError, KeyError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_MISSING) from None


def cmd_analyze(args):
    manifest, mdir = _load_manifest(args.manifest)
    try:
        result = evaluation.analyze(manifest, mdir, patch_size=args.patch_size,
                                    bins=args.bins)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_RECORDS
    evaluation.write_analysis(result, args.out)
    print(f"wrote analysis artifacts to {args.out} "
          f"({len(result['rows'])} (Q, EPE) rows)")
    return EXIT_OK


def cmd_evaluate(args):
    manifest, mdir = _load_manifest(args.manifest)
    protocol = evaluation.EvalProtocol(
        resize_shorter_side=args.shorter_side,
        max_matches=args.max_matches,
        auc_thresholds=tuple(float(t) for t in args.thresholds.split(",")),
        ransac=RansacConfig(seed=args.seed))
    try:
        report = evaluation.evaluate(manifest, mdir, protocol,
                                     MatcherConfig(), method=args.matcher)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_RECORDS
    if args.out:
        Path(args.out).write_bytes(evaluation.report_to_json_bytes(report))
    print(evaluation.format_report_table(report))
    return EXIT_OK


def cmd_synthesize(args):
    base_dir = Path(args.base)
    if not base_dir.is_dir():
        print(f"error: base image directory not found: {base_dir}", file=sys.stderr)
        return EXIT_MISSING
    images = []
    for path in sorted(base_dir.iterdir()):
        if path.suffix.lower() in (".pgm", ".ppm", ".png"):
            try:
                images.append(load_image(path))
            except ImageError as exc:
                log.warning("skipping %s: %s", path, exc)
    if not images:
        print(f"error: no loadable images in {base_dir}", file=sys.stderr)
        return EXIT_MISSING
    out = Path(args.out)
    manifest_path = evaluation.synthesize_dataset(
        images, args.count, args.seed, out.parent if out.suffix else out,
        manifest_name=out.name if out.suffix else "manifest.json")
    print(f"wrote {args.count} quadruplets to {manifest_path}")
    return EXIT_OK


def cmd_serve(args):
    _load_manifest(args.manifest)  # fail fast with exit 2
    import uvicorn

    from .service import create_app

    host, _, port = args.bind.rpartition(":")
    app = create_app(args.manifest)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="warning")
    except SystemExit:
        raise
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_PORT
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nirreg",
        description="RGB-NIR registration toolkit: gradient-inconsistency analysis, "
                    "homography evaluation and the IRAP annotation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="gradient distributions and the Q/EPE curve")
    p.add_argument("--manifest", required=True)
    p.add_argument("--patch-size", type=int, default=16, dest="patch_size")
    p.add_argument("--bins", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("evaluate", help="homography benchmark with per-split AUC")
    p.add_argument("--manifest", required=True)
    p.add_argument("--shorter-side", type=int, default=480, dest="shorter_side")
    p.add_argument("--max-matches", type=int, default=1000, dest="max_matches")
    p.add_argument("--thresholds", default="3,5,10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matcher", choices=("builtin", "oracle"), default="builtin")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synthesize", help="generate a synthetic quadruplet dataset")
    p.add_argument("--base", required=True, help="directory of base images")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output manifest path or directory")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
