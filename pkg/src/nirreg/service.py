"""HTTP annotation service backing the browser UI.

Session state machine: clicking -> seeded -> refined -> done; any out-of-order
request returns 409 and leaves state unchanged. All manifest mutations are
persisted atomically (write-temp-then-rename).
"""

from __future__ import annotations

import io
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import geometry, pipeline
from .geometry import Correspondence
from .image import PixelCoord, load_image, rgb_to_gray

PHASES = ("clicking", "seeded", "refined", "done")


class ServiceError(Exception):
    def __init__(self, status, code, message):
        self.status = status
        self.code = code
        self.message = message


class Session:
    def __init__(self, quadruplet_id):
        self.id = uuid.uuid4().hex[:12]
        self.quadruplet_id = quadruplet_id
        self.phase = "clicking"
        self.clicks = []
        self.h1 = None
        self.h2 = None
        self.h_gt = None
        self.residuals = []
        self.inlier_count = 0
        self.lock = threading.Lock()

    def to_json(self):
        return {
            "id": self.id,
            "quadruplet_id": self.quadruplet_id,
            "phase": self.phase,
            "clicks": [c.to_json() for c in self.clicks],
            "h1": None if self.h1 is None else self.h1.to_flat(),
            "h2": None if self.h2 is None else self.h2.to_flat(),
            "h_gt": None if self.h_gt is None else self.h_gt.to_flat(),
            "residuals": self.residuals,
            "inlier_count": self.inlier_count,
        }


class AnnotationService:
    def __init__(self, manifest_path, matcher_cfg=None, ransac_cfg=None):
        self.manifest_path = Path(manifest_path)
        self.manifest_dir = self.manifest_path.parent
        self.manifest = pipeline.load_manifest(self.manifest_path)
        self.matcher_cfg = matcher_cfg or pipeline.MatcherConfig()
        self.ransac_cfg = ransac_cfg or pipeline.RansacConfig()
        self.sessions = {}
        self.manifest_lock = threading.Lock()

    def find_quadruplet(self, qid):
        for _, quad, record in self.manifest.records():
            if quad.id == qid:
                return quad, record
        raise ServiceError(404, "not_found", f"unknown quadruplet {qid!r}")

    def get_session(self, sid):
        session = self.sessions.get(sid)
        if session is None:
            raise ServiceError(404, "not_found", f"unknown session {sid!r}")
        return session

    def load_gray(self, rel_path):
        img = load_image(self.manifest_dir / rel_path)
        return rgb_to_gray(img) if img.channels == 3 else img

    def persist(self):
        with self.manifest_lock:
            pipeline.save_manifest(self.manifest, self.manifest_path)


def _png_bytes(img):
    from PIL import Image as PILImage

    arr = np.rint(np.asarray(img.data) * 255.0).astype(np.uint8)
    pil = PILImage.fromarray(arr)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def create_app(manifest_path, matcher_cfg=None, ransac_cfg=None):
    svc = AnnotationService(manifest_path, matcher_cfg, ransac_cfg)
    app = FastAPI(title="nirreg annotation service")
    app.state.service = svc

    @app.exception_handler(ServiceError)
    async def service_error(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    def require_phase(session, *phases):
        if session.phase not in phases:
            raise ServiceError(409, "invalid_phase",
                               f"action not allowed in phase {session.phase!r}")

    @app.get("/api/quadruplets")
    def list_quadruplets():
        return [{"id": quad.id, "status": record.status,
                 "scene": scene.name, "images": quad.image_paths()}
                for scene, quad, record in svc.manifest.records()]

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        if ":" not in image_id:
            raise ServiceError(400, "bad_request",
                               "image id must look like '<quadruplet>:<key>'")
        qid, key = image_id.split(":", 1)
        quad, _ = svc.find_quadruplet(qid)
        paths = quad.image_paths()
        if key not in paths:
            raise ServiceError(404, "not_found", f"unknown image key {key!r}")
        return Response(content=_png_bytes(svc.load_gray(paths[key])),
                        media_type="image/png")

    @app.get("/api/sessions")
    def list_sessions():
        return [s.to_json() for s in svc.sessions.values()]

    @app.post("/api/sessions", status_code=201)
    def create_session(body: dict):
        qid = body.get("quadruplet_id")
        if not qid:
            raise ServiceError(400, "bad_request", "quadruplet_id required")
        svc.find_quadruplet(qid)
        session = Session(qid)
        svc.sessions[session.id] = session
        return session.to_json()

    @app.get("/api/sessions/{sid}")
    def get_session(sid: str):
        return svc.get_session(sid).to_json()

    @app.post("/api/sessions/{sid}/clicks")
    def add_click(sid: str, body: dict):
        session = svc.get_session(sid)
        with session.lock:
            require_phase(session, "clicking")
            try:
                a = PixelCoord(*[float(v) for v in body["a"]])
                b = PixelCoord(*[float(v) for v in body["b"]])
            except (KeyError, TypeError, ValueError):
                raise ServiceError(400, "bad_request",
                                   "body must be {a:[x,y], b:[x,y]}") from None
            session.clicks.append(Correspondence(a, b))
            return session.to_json()

    @app.post("/api/sessions/{sid}/seed")
    def seed(sid: str):
        session = svc.get_session(sid)
        with session.lock:
            require_phase(session, "clicking")
            if len(session.clicks) < 4:
                raise ServiceError(409, "too_few_clicks",
                                   f"need >= 4 click pairs, have {len(session.clicks)}")
            try:
                h1, residuals = pipeline.seed_homography(session.clicks)
            except geometry.RankDeficiencyError as exc:
                raise ServiceError(422, "degenerate_clicks", str(exc)) from None
            session.h1 = h1
            session.residuals = residuals
            session.phase = "seeded"
            return session.to_json()

    @app.post("/api/sessions/{sid}/refine")
    def refine(sid: str):
        session = svc.get_session(sid)
        with session.lock:
            require_phase(session, "seeded")
            quad, _ = svc.find_quadruplet(session.quadruplet_id)
            img_a = svc.load_gray(quad.a_rgb)
            img_b = svc.load_gray(quad.b_rgb)
            try:
                h2, result = pipeline.refine_residual(img_a, img_b, session.h1,
                                                      svc.matcher_cfg, svc.ransac_cfg)
            except geometry.NoConsensusError as exc:
                raise ServiceError(422, "no_consensus", str(exc)) from None
            session.h2 = h2
            session.h_gt = pipeline.compose_gt(h2, session.h1)
            session.inlier_count = int(result.inlier_mask.sum())
            session.phase = "refined"
            return session.to_json()

    @app.get("/api/sessions/{sid}/overlay")
    def overlay(sid: str):
        session = svc.get_session(sid)
        require_phase(session, "seeded", "refined", "done")
        quad, _ = svc.find_quadruplet(session.quadruplet_id)
        img_a = svc.load_gray(quad.a_rgb)
        img_b = svc.load_gray(quad.b_rgb)
        h = session.h_gt if session.h_gt is not None else session.h1
        warped = pipeline.warp_image(img_a, h, (img_b.width, img_b.height))
        return Response(content=_png_bytes(warped), media_type="image/png")

    def finish(sid, status):
        session = svc.get_session(sid)
        with session.lock:
            require_phase(session, "refined")
            quad, record = svc.find_quadruplet(session.quadruplet_id)
            record.status = status
            if status == "accepted":
                record.h1 = session.h1
                record.h2 = session.h2
                record.h_gt = session.h_gt
                record.click_pairs = list(session.clicks)
                record.residual_inlier_count = session.inlier_count
            session.phase = "done"
            svc.persist()
            return session.to_json()

    @app.post("/api/sessions/{sid}/accept")
    def accept(sid: str):
        return finish(sid, "accepted")

    @app.post("/api/sessions/{sid}/reject")
    def reject(sid: str):
        return finish(sid, "rejected")

    return app
