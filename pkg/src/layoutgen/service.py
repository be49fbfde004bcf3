"""HTTP design service: upload a background and foreground elements, generate
six jittered candidate designs, select, hand-edit boxes, and export the final
banner plus its annotation record.

Sessions persist in an embedded sqlite store with a TTL; images are stored as
content-addressed PNG blobs next to it. Candidate seeds derive from the
service seed and the session content hash, so a fixed seed makes the whole
flow reproducible.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import secrets
import sqlite3
import threading
import time
import zlib
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, Request, Response, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .conditioning import EmbedderConfig
from .data import AnnotationElement, AnnotationRecord
from .elements import (
    BackgroundImage,
    DesignSample,
    ForegroundSet,
    ImageElement,
    TextElement,
    canonical_text_class,
)
from .errors import RenderOverflowError, ValidationError
from .geometry import Layout, NormalizedBox, validate_box_values
from .losses import LossWeights
from .networks import NetworkConfig, build_bundle, load_checkpoint
from .rendering import RenderSpec, enforce_center_alignment, jitter_layout, render_design

API_PREFIX = "/v1"
DEFAULT_CANDIDATES = 6
SESSION_TTL_SECONDS = 24 * 3600


class SessionStore:
    """Durable session state: sqlite for JSON rows, files for image blobs."""

    def __init__(self, root, ttl_seconds: int = SESSION_TTL_SECONDS):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "blobs").mkdir(exist_ok=True)
        self.ttl = ttl_seconds
        self._db = sqlite3.connect(self.root / "sessions.db", check_same_thread=False)
        self._db.execute(
            "CREATE TABLE IF NOT EXISTS sessions (id TEXT PRIMARY KEY, data TEXT, updated REAL)"
        )
        self._db.commit()
        self._lock = threading.Lock()

    def create(self) -> str:
        session_id = secrets.token_urlsafe(9)
        state = {"foreground": [], "background": None, "button_radius": None,
                 "candidates": [], "selection": [], "edited_layouts": {}}
        self.put(session_id, state)
        return session_id

    def get(self, session_id: str) -> Optional[dict]:
        with self._lock:
            row = self._db.execute(
                "SELECT data, updated FROM sessions WHERE id = ?", (session_id,)
            ).fetchone()
        if row is None:
            return None
        data, updated = row
        if time.time() - updated > self.ttl:
            with self._lock:
                self._db.execute("DELETE FROM sessions WHERE id = ?", (session_id,))
                self._db.commit()
            return None
        return json.loads(data)

    def put(self, session_id: str, state: dict) -> None:
        with self._lock:
            self._db.execute(
                "INSERT OR REPLACE INTO sessions (id, data, updated) VALUES (?, ?, ?)",
                (session_id, json.dumps(state, sort_keys=True), time.time()),
            )
            self._db.commit()

    def save_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()[:24]
        path = self.root / "blobs" / f"{digest}.png"
        if not path.exists():
            path.write_bytes(data)
        return digest

    def blob_bytes(self, digest: str) -> bytes:
        return (self.root / "blobs" / f"{digest}.png").read_bytes()

    def blob_image(self, digest: str) -> np.ndarray:
        return np.asarray(Image.open(io.BytesIO(self.blob_bytes(digest))).convert("RGB"))


def _png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _foreground_from_state(state: dict, store: SessionStore) -> ForegroundSet:
    elements = []
    for raw in state["foreground"]:
        if raw["type"] == "text":
            elements.append(TextElement(raw["string"], raw["class"]))
        else:
            elements.append(ImageElement(store.blob_image(raw["blob"])))
    return ForegroundSet(tuple(elements))


def _content_hash(state: dict) -> int:
    payload = json.dumps(
        {"background": state.get("background"), "foreground": state.get("foreground")},
        sort_keys=True,
    )
    return zlib.crc32(payload.encode("utf-8"))


def create_app(checkpoint_path=None, store_dir=None, service_seed: int = 0,
               render_spec: Optional[RenderSpec] = None) -> FastAPI:
    if checkpoint_path is not None:
        bundle, _ = load_checkpoint(checkpoint_path)
    else:
        bundle = build_bundle(NetworkConfig(), EmbedderConfig(), LossWeights(), seed=service_seed)
    bundle.eval()
    store = SessionStore(store_dir or Path.cwd() / "design_sessions")
    spec = render_spec or RenderSpec()
    app = FastAPI(title="layout design service", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    session_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def lock_for(session_id: str) -> threading.Lock:
        with locks_guard:
            if session_id not in session_locks:
                session_locks[session_id] = threading.Lock()
            return session_locks[session_id]

    @app.get(f"{API_PREFIX}/healthz")
    def healthz():
        return {"status": "ok", "parameters": bundle.parameter_count()}

    @app.post(f"{API_PREFIX}/sessions")
    def create_session():
        return {"id": store.create()}

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}")
    def get_session(session_id: str):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        view = {
            "id": session_id,
            "background": state["background"],
            "foreground": state["foreground"],
            "button_radius": state["button_radius"],
            "candidate_count": len(state["candidates"]),
            "selection": state["selection"],
        }
        return view

    @app.put(f"{API_PREFIX}/sessions/{{session_id}}/background")
    async def put_background(session_id: str, file: UploadFile):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        raw = await file.read()
        try:
            image = Image.open(io.BytesIO(raw)).convert("RGB")
        except Exception:
            return _error(422, "background image could not be decoded")
        pixels = np.asarray(image)
        blob = store.save_blob(_png_bytes(pixels))
        state["background"] = {
            "blob": blob, "width": image.width, "height": image.height,
        }
        state["candidates"] = []
        state["selection"] = []
        state["edited_layouts"] = {}
        store.put(session_id, state)
        return state["background"]

    @app.put(f"{API_PREFIX}/sessions/{{session_id}}/foreground")
    async def put_foreground(session_id: str, request: Request):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        payload = await request.json()
        elements = payload.get("elements")
        if not isinstance(elements, list):
            return _error(422, "body must carry an elements list")
        normalized = []
        for raw in elements:
            etype = raw.get("type", "text")
            if etype == "text":
                try:
                    cls = canonical_text_class(raw.get("class", ""))
                except ValidationError as err:
                    return _error(422, str(err))
                string = raw.get("string", "")
                if not isinstance(string, str) or not string:
                    return _error(422, "text elements need a non-empty string")
                normalized.append({"type": "text", "class": cls, "string": string})
            elif etype == "image":
                b64 = raw.get("image_b64")
                if not b64:
                    return _error(422, "image elements need image_b64")
                try:
                    patch = Image.open(io.BytesIO(base64.b64decode(b64))).convert("RGB")
                except Exception:
                    return _error(422, "image patch could not be decoded")
                blob = store.save_blob(_png_bytes(np.asarray(patch)))
                normalized.append({"type": "image", "blob": blob})
            else:
                return _error(422, f"unknown element type {etype!r}")
        state["foreground"] = normalized
        if "button_radius" in payload and payload["button_radius"] is not None:
            state["button_radius"] = int(payload["button_radius"])
        state["candidates"] = []
        state["selection"] = []
        state["edited_layouts"] = {}
        store.put(session_id, state)
        return {"elements": normalized, "element_count": len(normalized),
                "button_radius": state["button_radius"]}

    def _render_candidate(state: dict, layout: Layout, fg: ForegroundSet):
        background = BackgroundImage(store.blob_image(state["background"]["blob"]))
        sample = DesignSample(background=background, foreground=fg, layout=layout)
        radius = state["button_radius"]
        this_spec = spec if radius is None else replace(spec, button_corner_radius=radius)
        return render_design(sample, this_spec)

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/candidates")
    def make_candidates(session_id: str, count: int = DEFAULT_CANDIDATES):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        if state["background"] is None or not state["foreground"]:
            return _error(409, "background and at least one foreground element required")
        count = max(1, min(int(count), 16))
        with lock_for(session_id):
            fg = _foreground_from_state(state, store)
            background = BackgroundImage(store.blob_image(state["background"]["blob"]))
            base_seed = (service_seed * 2_654_435_761 + _content_hash(state)) % (2**31)
            candidates = []
            for k in range(count):
                gen = torch.Generator().manual_seed((base_seed + k) % (2**31))
                layout = bundle.generate(background, fg, generator=gen).layout
                layout = jitter_layout(layout, spec.jitter_fraction, seed=base_seed + 1000 + k)
                layout = enforce_center_alignment(layout)
                entry = {
                    "layout": [list(b.as_tuple()) for b in layout.boxes],
                    "element_ids": list(layout.element_ids),
                    "seed": base_seed + k,
                    "preview_blob": None,
                    "warning": None,
                }
                try:
                    rendered = _render_candidate(state, layout, fg)
                    entry["preview_blob"] = store.save_blob(_png_bytes(rendered.image))
                except RenderOverflowError as err:
                    entry["warning"] = f"render overflow: {err}"
                candidates.append(entry)
            state["candidates"] = candidates
            state["selection"] = []
            state["edited_layouts"] = {}
            store.put(session_id, state)
        return {"candidates": [
            {k: v for k, v in c.items() if k != "seed"} for c in candidates
        ]}

    @app.get(f"{API_PREFIX}/sessions/{{session_id}}/preview/{{index}}")
    def preview(session_id: str, index: int):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        if index < 0 or index >= len(state["candidates"]):
            return _error(404, "no such candidate")
        blob = state["candidates"][index]["preview_blob"]
        if blob is None:
            return _error(409, "candidate was not rendered")
        return Response(content=store.blob_bytes(blob), media_type="image/png")

    @app.put(f"{API_PREFIX}/sessions/{{session_id}}/selection")
    async def put_selection(session_id: str, request: Request):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        payload = await request.json()
        indices = payload.get("indices")
        if not isinstance(indices, list) or not indices:
            return _error(422, "indices must be a non-empty list")
        if any(not isinstance(i, int) or i < 0 or i >= len(state["candidates"]) for i in indices):
            return _error(422, "selection index out of range")
        state["selection"] = sorted(set(indices))
        store.put(session_id, state)
        return {"selection": state["selection"]}

    @app.patch(f"{API_PREFIX}/sessions/{{session_id}}/layout")
    async def patch_layout(session_id: str, request: Request):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        payload = await request.json()
        candidate = payload.get("candidate")
        if candidate is None or not state["selection"]:
            return _error(409, "select a candidate before editing")
        if candidate not in state["selection"]:
            return _error(409, f"candidate {candidate} is not selected")
        element_id = payload.get("element_id")
        box = payload.get("box")
        if not isinstance(box, (list, tuple)) or len(box) != 4:
            return _error(422, "box must be [cy, cx, h, w]")
        try:
            validate_box_values(*box)
        except ValidationError as err:
            return _error(422, str(err))
        if float(box[2]) < 1e-4 or float(box[3]) < 1e-4:
            return _error(422, "box size below the minimum 1e-4")
        base = state["candidates"][candidate]
        if element_id not in base["element_ids"]:
            return _error(422, f"unknown element id {element_id}")
        key = str(candidate)
        edited = state["edited_layouts"].get(key) or [list(b) for b in base["layout"]]
        edited[base["element_ids"].index(element_id)] = [float(v) for v in box]
        state["edited_layouts"][key] = edited
        store.put(session_id, state)
        return {"candidate": candidate, "layout": edited}

    @app.post(f"{API_PREFIX}/sessions/{{session_id}}/export")
    async def export(session_id: str, request: Request):
        state = store.get(session_id)
        if state is None:
            return _error(404, "unknown session")
        payload = await request.json() if await request.body() else {}
        if not state["selection"]:
            return _error(409, "nothing selected")
        candidate = payload.get("candidate", state["selection"][0])
        if candidate not in state["selection"]:
            return _error(409, f"candidate {candidate} is not selected")
        base = state["candidates"][candidate]
        rows = state["edited_layouts"].get(str(candidate)) or base["layout"]
        layout = Layout(
            tuple(NormalizedBox(*row) for row in rows),
            tuple(base["element_ids"]),
        )
        fg = _foreground_from_state(state, store)
        try:
            rendered = _render_candidate(state, layout, fg)
        except RenderOverflowError as err:
            return _error(409, f"export cannot render: {err}")
        elements = []
        for raw, row in zip(state["foreground"], rows):
            if raw["type"] == "text":
                elements.append(AnnotationElement(
                    type="text", box=[float(v) for v in row],
                    text_class=raw["class"], string=raw["string"],
                ))
            else:
                elements.append(AnnotationElement(
                    type="image", box=[float(v) for v in row],
                    patch_path=f"blobs/{raw['blob']}.png",
                ))
        record = AnnotationRecord(
            record_id=f"{session_id}-c{candidate}",
            background_path=f"blobs/{state['background']['blob']}.png",
            width=state["background"]["width"],
            height=state["background"]["height"],
            elements=elements,
        )
        return {
            "record": record.to_dict(),
            "image_b64": base64.b64encode(_png_bytes(rendered.image)).decode("ascii"),
        }

    app.state.bundle = bundle
    app.state.store = store
    return app
