"""Interactive retrieval over HTTP: embed an uploaded sketch with a loaded
checkpoint and rank it against a prebuilt gallery index.

The index and all parameters are immutable after startup; backbone access is
serialized behind a lock so concurrent requests stay deterministic.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import io
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from PIL import Image

from .encoders import MockClipEncoder
from .evaluation import EmbeddingIndex, rank
from .manifest import read_manifest
from .pipeline import manifest_hash, sketch_epsilon_seed
from .rendering import rasterize_sketch


@dataclass
class ServiceConfig:
    checkpoint_path: str
    index_path: str
    manifest_path: str
    host: str = "127.0.0.1"
    port: int = 8000
    k_default: int = 5
    backbone_profile: str = "mock"  # mock | real
    cors_allowlist: list[str] = field(default_factory=lambda: ["*"])


def _load_model(config: ServiceConfig):
    import torch

    from .backbone import MockBackbone
    from .pipeline import RetrievalModel
    from .training import load_checkpoint, train_config_from_dict

    if config.backbone_profile != "mock":
        raise NotImplementedError("only the mock backbone profile is bundled; "
                                  "point backbone_profile at 'mock' or load real assets")
    payload = load_checkpoint(config.checkpoint_path)
    train_cfg = train_config_from_dict(payload["config"])
    backbone = MockBackbone()
    model = RetrievalModel(backbone, MockClipEncoder(), payload["class_names"],
                           config=train_cfg.pipeline)
    model.load_state_dict(payload["model"])
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model, payload


def create_app(config: ServiceConfig) -> FastAPI:
    manifest = read_manifest(config.manifest_path)
    index = EmbeddingIndex.load(config.index_path)
    model, payload = _load_model(config)
    mani_hash = manifest_hash(manifest)
    if payload["manifest_hash"] != mani_hash:
        raise RuntimeError("checkpoint/manifest hash mismatch; refusing to start")

    index_hash = hashlib.sha256(Path(config.index_path).read_bytes()).hexdigest()
    ckpt_hash = hashlib.sha256(Path(config.checkpoint_path).read_bytes()).hexdigest()
    shapes_by_id = {r.shape_id: r for r in manifest.shapes}
    backbone_lock = threading.Lock()

    app = FastAPI(title="diffsbsr retrieval service")
    app.add_middleware(CORSMiddleware, allow_origins=config.cors_allowlist,
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/api/health")
    def health():
        return {"status": "ok", "checkpoint_hash": ckpt_hash,
                "index_hash": index_hash, "gallery_size": len(index.ids)}

    @app.post("/api/retrieve")
    async def retrieve(request: Request, k: int = Query(default=config.k_default)):
        if not 1 <= k <= len(index.ids):
            return JSONResponse(status_code=422,
                                content={"error": f"k must be in [1, {len(index.ids)}]"})
        raw = await _read_image_payload(request)
        if raw is None:
            return JSONResponse(status_code=400, content={"error": "missing image payload"})
        try:
            image = Image.open(io.BytesIO(raw))
            image.load()
        except Exception:
            return JSONResponse(status_code=400, content={"error": "undecodable image"})

        t0 = time.perf_counter()
        sketch = rasterize_sketch(image, model.config.image_size)
        token = uuid.uuid4().hex
        with backbone_lock:
            import torch
            with torch.no_grad():
                q = model.embed_sketch(sketch, "a sketch of an object",
                                       sketch_epsilon_seed("service-query")).numpy()
        t1 = time.perf_counter()
        ranked = rank(np.asarray(q), index, query_id=token)
        t2 = time.perf_counter()

        entries = []
        for gid, score in list(zip(ranked.gallery_ids, ranked.scores))[:k]:
            rec = shapes_by_id.get(gid)
            n_views = len(rec.view_uris) if rec else 0
            entries.append({
                "shape_id": gid,
                "category": rec.category if rec else "",
                "score": score,
                "thumbnail_url": f"/api/shapes/{gid}/views/0" if n_views else None,
                "view_urls": [f"/api/shapes/{gid}/views/{i}" for i in range(n_views)],
            })
        t3 = time.perf_counter()
        return {"query_token": token, "entries": entries,
                "timing_ms": {"embed": (t1 - t0) * 1e3, "rank": (t2 - t1) * 1e3,
                              "serialize": (t3 - t2) * 1e3}}

    @app.get("/api/shapes/{shape_id:path}/views/{view_index}")
    def thumbnail(shape_id: str, view_index: int):
        rec = shapes_by_id.get(shape_id)
        if rec is None or not 0 <= view_index < len(rec.view_uris):
            return JSONResponse(status_code=404, content={"error": "unknown shape or view"})
        path = Path(rec.view_uris[view_index])
        if not path.is_file():
            return JSONResponse(status_code=404, content={"error": "view file missing"})
        media = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return Response(content=path.read_bytes(), media_type=media)

    return app


async def _read_image_payload(request: Request) -> bytes | None:
    ctype = request.headers.get("content-type", "")
    if ctype.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("file") or form.get("image")
        if upload is None:
            return None
        return await upload.read()
    if ctype.startswith("application/json"):
        body = await request.json()
        b64 = body.get("image_b64")
        if not b64:
            return None
        try:
            return base64.b64decode(b64, validate=True)
        except (binascii.Error, ValueError):
            return b"\x00"  # force the decode failure path -> 400
    return await request.body() or None


def serve(config: ServiceConfig) -> None:
    import uvicorn
    uvicorn.run(create_app(config), host=config.host, port=config.port)
