"""Build a small synthetic annotation dataset for the integration test.

Writes a manifest with draft records into the directory given as argv[1] and
prints JSON with, per quadruplet, five exact click pairs under the planted
homography (so seeding recovers it) and the planted matrix itself.
"""

import json
import sys

import numpy as np

from nirreg import pipeline
from nirreg.evaluation import synthesize_dataset
from nirreg.geometry import apply
from nirreg.image import Image, PixelCoord

SIZE = 192


def textured_image(seed):
    rng = np.random.default_rng(seed)
    data = rng.random((SIZE, SIZE))
    for k in (2, 4):
        coarse = rng.random((SIZE // k + 1, SIZE // k + 1))
        data += np.kron(coarse, np.ones((k, k)))[:SIZE, :SIZE]
    data -= data.min()
    return Image(data / data.max())


def main():
    out_dir = sys.argv[1]
    manifest_path = synthesize_dataset([textured_image(0)], 2, seed=11,
                                       out_dir=out_dir)
    manifest = pipeline.load_manifest(manifest_path)
    info = {}
    step = SIZE // 6
    pts = [(x, y) for y in range(step, SIZE - step + 1, step)
           for x in range(step, SIZE - step + 1, step)]
    for scene in manifest.scenes:
        for i, (quad, record) in enumerate(scene.quadruplets):
            # keep well-spread points whose warped target stays in frame
            clicks = []
            for x, y in pts:
                dst = apply(record.h_gt, PixelCoord(x, y))
                if 0.0 <= dst.x <= SIZE - 1 and 0.0 <= dst.y <= SIZE - 1:
                    clicks.append({"a": [float(x), float(y)],
                                   "b": [dst.x, dst.y]})
            # pick the candidates nearest the corners and center for spread
            targets = [(0, 0), (SIZE, 0), (0, SIZE), (SIZE, SIZE),
                       (SIZE / 2, SIZE / 2)]
            chosen = []
            for tx, ty in targets:
                best = min((c for c in clicks if c not in chosen),
                           key=lambda c: (c["a"][0] - tx) ** 2 + (c["a"][1] - ty) ** 2)
                chosen.append(best)
            clicks = chosen
            assert len(clicks) >= 4
            info[quad.id] = {"clicks": clicks,
                             "h_gt": record.h_gt.to_flat()}
            scene.quadruplets[i] = (quad, pipeline.AnnotationRecord(quad.id))
    pipeline.save_manifest(manifest, manifest_path)
    print(json.dumps({"manifest": str(manifest_path), "quadruplets": info}))


if __name__ == "__main__":
    main()
