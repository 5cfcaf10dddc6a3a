import io

import numpy as np
import pytest
from fastapi.testclient import TestClient

from nirreg import geometry, pipeline
from nirreg.evaluation import synthesize_dataset
from nirreg.geometry import Correspondence, Homography, apply, estimate_dlt
from nirreg.image import Image, PixelCoord
from nirreg.service import create_app


def textured_image(seed, size=192):
    rng = np.random.default_rng(seed)
    data = rng.random((size, size))
    for k in (2, 4):
        coarse = rng.random((size // k + 1, size // k + 1))
        data += np.kron(coarse, np.ones((k, k)))[:size, :size]
    data -= data.min()
    return Image(data / data.max())


@pytest.fixture
def service_setup(tmp_path):
    manifest_path = synthesize_dataset([textured_image(0)], 2, seed=5,
                                       out_dir=tmp_path)
    # reset annotations so sessions exercise the full flow
    manifest = pipeline.load_manifest(manifest_path)
    gts = {}
    for scene in manifest.scenes:
        for i, (quad, record) in enumerate(scene.quadruplets):
            gts[quad.id] = record.h_gt
            scene.quadruplets[i] = (quad, pipeline.AnnotationRecord(quad.id))
    pipeline.save_manifest(manifest, manifest_path)
    client = TestClient(create_app(manifest_path))
    return client, manifest_path, gts


def exact_clicks(h_gt, size=192, n=5):
    pts = [(10, 10), (size - 20, 15), (12, size - 25),
           (size - 15, size - 15), (size // 2, size // 2)][:n]
    return [{"a": [float(x), float(y)],
             "b": [apply(h_gt, PixelCoord(x, y)).x,
                   apply(h_gt, PixelCoord(x, y)).y]}
            for x, y in pts]


class TestListing:
    def test_quadruplets(self, service_setup):
        client, _, _ = service_setup
        resp = client.get("/api/quadruplets")
        assert resp.status_code == 200
        items = resp.json()
        assert len(items) == 2
        assert items[0]["status"] == "draft"
        assert set(items[0]["images"]) == {"a_rgb", "a_nir", "b_rgb", "b_nir"}

    def test_image_png(self, service_setup):
        client, _, _ = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        resp = client.get(f"/api/image/{qid}:a_rgb")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_image_key(self, service_setup):
        client, _, _ = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        resp = client.get(f"/api/image/{qid}:nope")
        assert resp.status_code == 404
        assert resp.json()["code"] == "not_found"

    def test_bad_image_id(self, service_setup):
        client, _, _ = service_setup
        resp = client.get("/api/image/noseparator")
        assert resp.status_code == 400


class TestSessionFlow:
    def test_full_accept_flow(self, service_setup):
        client, manifest_path, gts = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]

        clicks = exact_clicks(gts[qid])
        for c in clicks:
            resp = client.post(f"/api/sessions/{sid}/clicks", json=c)
            assert resp.status_code == 200
        state = client.post(f"/api/sessions/{sid}/seed").json()
        assert state["phase"] == "seeded"

        # seed must equal a direct DLT on the same clicks
        corrs = [Correspondence(PixelCoord(*c["a"]), PixelCoord(*c["b"]))
                 for c in clicks]
        expected = estimate_dlt(corrs)
        assert np.allclose(np.array(state["h1"]).reshape(3, 3),
                           expected.m, atol=1e-9)

        state = client.post(f"/api/sessions/{sid}/refine").json()
        assert state["phase"] == "refined"
        assert state["inlier_count"] >= 4
        h_gt = Homography(np.array(state["h_gt"]).reshape(3, 3))
        assert geometry.corner_error(h_gt, gts[qid], 192, 192) < 1.0

        resp = client.post(f"/api/sessions/{sid}/accept")
        assert resp.status_code == 200
        assert resp.json()["phase"] == "done"

        # manifest on disk reflects the accepted annotation
        manifest = pipeline.load_manifest(manifest_path)
        record = next(r for _, q, r in manifest.records() if q.id == qid)
        assert record.status == "accepted"
        assert record.residual_inlier_count >= 4
        assert geometry.corner_error(record.h_gt, gts[qid], 192, 192) < 1.0
        assert not manifest_path.with_suffix(".json.tmp").exists()

    def test_reject_flow(self, service_setup):
        client, manifest_path, gts = service_setup
        qid = client.get("/api/quadruplets").json()[1]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        for c in exact_clicks(gts[qid]):
            client.post(f"/api/sessions/{sid}/clicks", json=c)
        client.post(f"/api/sessions/{sid}/seed")
        client.post(f"/api/sessions/{sid}/refine")
        resp = client.post(f"/api/sessions/{sid}/reject")
        assert resp.status_code == 200
        manifest = pipeline.load_manifest(manifest_path)
        record = next(r for _, q, r in manifest.records() if q.id == qid)
        assert record.status == "rejected"
        assert record.h_gt is None

    def test_overlay_png(self, service_setup):
        client, _, gts = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        resp = client.get(f"/api/sessions/{sid}/overlay")
        assert resp.status_code == 409
        for c in exact_clicks(gts[qid]):
            client.post(f"/api/sessions/{sid}/clicks", json=c)
        client.post(f"/api/sessions/{sid}/seed")
        resp = client.get(f"/api/sessions/{sid}/overlay")
        assert resp.status_code == 200
        assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"


class TestStateMachine:
    def test_refine_before_seed_409(self, service_setup):
        client, _, _ = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        resp = client.post(f"/api/sessions/{sid}/refine")
        assert resp.status_code == 409
        assert resp.json()["code"] == "invalid_phase"
        assert client.get(f"/api/sessions/{sid}").json()["phase"] == "clicking"

    def test_seed_with_too_few_clicks_409(self, service_setup):
        client, _, gts = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        for c in exact_clicks(gts[qid], n=3):
            client.post(f"/api/sessions/{sid}/clicks", json=c)
        resp = client.post(f"/api/sessions/{sid}/seed")
        assert resp.status_code == 409
        assert resp.json()["code"] == "too_few_clicks"

    def test_accept_before_refine_409(self, service_setup):
        client, _, gts = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        for c in exact_clicks(gts[qid]):
            client.post(f"/api/sessions/{sid}/clicks", json=c)
        client.post(f"/api/sessions/{sid}/seed")
        resp = client.post(f"/api/sessions/{sid}/accept")
        assert resp.status_code == 409

    def test_click_after_seed_409(self, service_setup):
        client, _, gts = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        for c in exact_clicks(gts[qid]):
            client.post(f"/api/sessions/{sid}/clicks", json=c)
        client.post(f"/api/sessions/{sid}/seed")
        resp = client.post(f"/api/sessions/{sid}/clicks",
                           json={"a": [1, 1], "b": [1, 1]})
        assert resp.status_code == 409

    def test_unknown_session_404(self, service_setup):
        client, _, _ = service_setup
        assert client.get("/api/sessions/deadbeef").status_code == 404

    def test_unknown_quadruplet_404(self, service_setup):
        client, _, _ = service_setup
        resp = client.post("/api/sessions", json={"quadruplet_id": "ghost"})
        assert resp.status_code == 404

    def test_malformed_click_400(self, service_setup):
        client, _, _ = service_setup
        qid = client.get("/api/quadruplets").json()[0]["id"]
        sid = client.post("/api/sessions", json={"quadruplet_id": qid}).json()["id"]
        resp = client.post(f"/api/sessions/{sid}/clicks", json={"a": [1]})
        assert resp.status_code == 400
        assert resp.json()["code"] == "bad_request"
