"""Design service endpoints: session flow, candidates, edits, export."""

import base64
import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from layoutgen.conditioning import EmbedderConfig
from layoutgen.geometry import NormalizedBox
from layoutgen.networks import NetworkConfig, build_bundle, save_checkpoint
from layoutgen.service import create_app

EMB = EmbedderConfig(
    token_dim=32, noise_dim=8, string_dim=12, class_dim=6, length_dim=6,
    patch_dim=24, background_patch_size=16, working_resolution=64,
    patch_encode_resolution=32,
)
NET = NetworkConfig(model_dim=32, num_heads=2, encoder_depth=1, decoder_depth=1,
                    ffn_dim=64, max_elements=8, max_chars=12)


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    bundle = build_bundle(NET, EMB, seed=3)
    ckpt = root / "model.pt"
    save_checkpoint(bundle, ckpt)
    app = create_app(checkpoint_path=ckpt, store_dir=root / "store", service_seed=7)
    return TestClient(app)


def png_bytes(color=(200, 180, 90), size=(96, 96)) -> bytes:
    img = Image.new("RGB", size, color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def new_session(client) -> str:
    return client.post("/v1/sessions").json()["id"]


def upload_inputs(client, sid, texts=None):
    client.put(f"/v1/sessions/{sid}/background",
               files={"file": ("bg.png", png_bytes(), "image/png")})
    elements = texts or [
        {"type": "text", "class": "header", "string": "Big Sale"},
        {"type": "text", "class": "body", "string": "Fresh deals daily"},
        {"type": "text", "class": "button", "string": "Shop"},
    ]
    return client.put(f"/v1/sessions/{sid}/foreground", json={"elements": elements})


class TestSessions:
    def test_distinct_urlsafe_ids(self, client):
        a, b = new_session(client), new_session(client)
        assert a != b
        assert all(c.isalnum() or c in "-_" for c in a)

    def test_fresh_session_empty(self, client):
        sid = new_session(client)
        view = client.get(f"/v1/sessions/{sid}").json()
        assert view["foreground"] == []
        assert view["background"] is None
        assert view["candidate_count"] == 0

    def test_unknown_session_404(self, client):
        assert client.get("/v1/sessions/nope").status_code == 404
        assert client.put("/v1/sessions/nope/foreground", json={"elements": []}).status_code == 404


class TestUploads:
    def test_background_echoes_dimensions(self, client):
        sid = new_session(client)
        resp = client.put(f"/v1/sessions/{sid}/background",
                          files={"file": ("bg.png", png_bytes(size=(120, 80)), "image/png")})
        assert resp.status_code == 200
        assert resp.json() == {"blob": resp.json()["blob"], "width": 120, "height": 80}

    def test_undecodable_image_422(self, client):
        sid = new_session(client)
        resp = client.put(f"/v1/sessions/{sid}/background",
                          files={"file": ("bg.png", b"not an image", "image/png")})
        assert resp.status_code == 422

    def test_foreground_round_trip(self, client):
        sid = new_session(client)
        resp = upload_inputs(client, sid)
        assert resp.status_code == 200
        fetched = client.get(f"/v1/sessions/{sid}").json()["foreground"]
        assert [e["string"] for e in fetched] == ["Big Sale", "Fresh deals daily", "Shop"]

    def test_footnote_alias_maps_to_disclaimer(self, client):
        sid = new_session(client)
        resp = upload_inputs(client, sid, texts=[
            {"type": "text", "class": "footnote", "string": "terms apply"},
        ])
        assert resp.json()["elements"][0]["class"] == "disclaimer"

    def test_invalid_class_422(self, client):
        sid = new_session(client)
        resp = upload_inputs(client, sid, texts=[
            {"type": "text", "class": "jumbotron", "string": "x"},
        ])
        assert resp.status_code == 422


class TestCandidates:
    def test_requires_inputs(self, client):
        sid = new_session(client)
        assert client.post(f"/v1/sessions/{sid}/candidates").status_code == 409

    def test_default_count_six(self, client):
        sid = new_session(client)
        upload_inputs(client, sid)
        resp = client.post(f"/v1/sessions/{sid}/candidates")
        assert resp.status_code == 200
        assert len(resp.json()["candidates"]) == 6

    def test_layouts_valid_and_deterministic(self, client):
        sid = new_session(client)
        upload_inputs(client, sid)
        c1 = client.post(f"/v1/sessions/{sid}/candidates").json()["candidates"]
        c2 = client.post(f"/v1/sessions/{sid}/candidates").json()["candidates"]
        assert [c["layout"] for c in c1] == [c["layout"] for c in c2]
        for cand in c1:
            for cy, cx, h, w in cand["layout"]:
                assert 0.0 <= cy <= 1.0 and 0.0 <= cx <= 1.0
                assert 1e-4 <= h <= 1.0 and 1e-4 <= w <= 1.0

    def test_previews_served_as_png(self, client):
        sid = new_session(client)
        upload_inputs(client, sid)
        client.post(f"/v1/sessions/{sid}/candidates?count=2")
        resp = client.get(f"/v1/sessions/{sid}/preview/0")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        Image.open(io.BytesIO(resp.content))


class TestEditsAndExport:
    def prepare(self, client):
        sid = new_session(client)
        client.put(f"/v1/sessions/{sid}/background",
                   files={"file": ("bg.png", png_bytes(size=(256, 256)), "image/png")})
        client.put(f"/v1/sessions/{sid}/foreground", json={"elements": [
            {"type": "text", "class": "header", "string": "Big Sale"},
            {"type": "text", "class": "body", "string": "Fresh deals daily"},
            {"type": "text", "class": "button", "string": "Shop"},
        ]})
        client.post(f"/v1/sessions/{sid}/candidates?count=3")
        client.put(f"/v1/sessions/{sid}/selection", json={"indices": [1]})
        return sid

    def test_edit_requires_selection(self, client):
        sid = new_session(client)
        upload_inputs(client, sid)
        client.post(f"/v1/sessions/{sid}/candidates?count=2")
        resp = client.patch(f"/v1/sessions/{sid}/layout",
                            json={"candidate": 0, "element_id": 0,
                                  "box": [0.5, 0.5, 0.2, 0.2]})
        assert resp.status_code == 409

    def test_edit_range_validation(self, client):
        sid = self.prepare(client)
        resp = client.patch(f"/v1/sessions/{sid}/layout",
                            json={"candidate": 1, "element_id": 0,
                                  "box": [0.5, 0.5, 1.4, 0.2]})
        assert resp.status_code == 422

    def test_edit_then_export_exact_round_trip(self, client):
        sid = self.prepare(client)
        box = [0.41231, 0.52344, 0.18756, 0.33127]
        resp = client.patch(f"/v1/sessions/{sid}/layout",
                            json={"candidate": 1, "element_id": 0, "box": box})
        assert resp.status_code == 200
        exported = client.post(f"/v1/sessions/{sid}/export", json={"candidate": 1})
        assert exported.status_code == 200
        record = exported.json()["record"]
        assert record["elements"][0]["box"] == pytest.approx(box, abs=1e-9)
        image = Image.open(io.BytesIO(base64.b64decode(exported.json()["image_b64"])))
        assert image.size == (256, 256)

    def test_export_requires_selection(self, client):
        sid = new_session(client)
        upload_inputs(client, sid)
        client.post(f"/v1/sessions/{sid}/candidates?count=2")
        assert client.post(f"/v1/sessions/{sid}/export", json={}).status_code == 409

    def test_export_byte_stable(self, client):
        sid = self.prepare(client)
        a = client.post(f"/v1/sessions/{sid}/export", json={"candidate": 1}).json()
        b = client.post(f"/v1/sessions/{sid}/export", json={"candidate": 1}).json()
        assert a["image_b64"] == b["image_b64"]
        assert a["record"] == b["record"]


class TestPersistence:
    def test_sessions_survive_service_restart(self, tmp_path):
        bundle = build_bundle(NET, EMB, seed=4)
        ckpt = tmp_path / "model.pt"
        save_checkpoint(bundle, ckpt)
        store = tmp_path / "store"
        first = TestClient(create_app(checkpoint_path=ckpt, store_dir=store, service_seed=1))
        sid = first.post("/v1/sessions").json()["id"]
        first.put(f"/v1/sessions/{sid}/foreground", json={
            "elements": [{"type": "text", "class": "header", "string": "persists"}]
        })
        # a fresh app over the same store sees the session
        second = TestClient(create_app(checkpoint_path=ckpt, store_dir=store, service_seed=1))
        view = second.get(f"/v1/sessions/{sid}").json()
        assert view["foreground"][0]["string"] == "persists"
