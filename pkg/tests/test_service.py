"""HTTP retrieval service: health, retrieve, thumbnails, validation, and
online/offline ranking equivalence against the same checkpoint and index."""

import base64
import hashlib
import io
import random
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from diffsbsr.evaluation import EmbeddingIndex, rank
from diffsbsr.manifest import save_manifest
from diffsbsr.pipeline import (PipelineConfig, RetrievalModel, manifest_hash,
                               sketch_epsilon_seed, view_epsilon_seed)
from diffsbsr.rendering import rasterize_sketch
from diffsbsr.service import ServiceConfig, create_app
from diffsbsr.training import (TrainConfig, make_optimizer, save_checkpoint,
                               _load_view_images)

IMAGE_SIZE = 16


@pytest.fixture(scope="module")
def service_env(tmp_path_factory, corpus_manifest, backbone, clip_encoder,
                zero_shot_split):
    """Checkpoint, gallery index, manifest file, and a live test client."""
    root = tmp_path_factory.mktemp("service")
    config = TrainConfig(seed=0, pipeline=PipelineConfig(image_size=IMAGE_SIZE))
    torch.manual_seed(0)
    model = RetrievalModel(backbone, clip_encoder,
                           sorted(zero_shot_split.seen_categories),
                           config=config.pipeline, seed=0)
    optimizer = make_optimizer(model, config)
    ckpt = root / "ckpt.bin"
    save_checkpoint(ckpt, model, optimizer, 0, config,
                    manifest_hash(corpus_manifest), random.Random(0), random.Random(1))

    ids, labels, rows = [], [], []
    with torch.no_grad():
        for rec in corpus_manifest.shapes:
            views = _load_view_images(rec, IMAGE_SIZE, 1)
            caps = [f"a 3D rendering of {rec.category}"] * len(views)
            seeds = [view_epsilon_seed(rec.shape_id, i) for i in range(len(views))]
            emb, _ = model.embed_shape(views, caps, seeds)
            ids.append(rec.shape_id)
            labels.append(rec.category)
            rows.append(emb.numpy())
    index = EmbeddingIndex(tuple(ids), tuple(labels),
                           np.stack(rows).astype(np.float32))
    index_path = root / "index.bin"
    index.save(index_path)

    manifest_path = root / "manifest.tsv"
    save_manifest(corpus_manifest, manifest_path)

    svc = ServiceConfig(checkpoint_path=str(ckpt), index_path=str(index_path),
                        manifest_path=str(manifest_path))
    app = create_app(svc)
    client = TestClient(app)
    return {"client": client, "index": index, "model": model, "svc": svc,
            "manifest": corpus_manifest, "ckpt": ckpt, "index_path": index_path,
            "manifest_path": manifest_path, "root": root}


def sketch_bytes(manifest, n=1):
    payloads = []
    for rec in manifest.sketches[:n]:
        payloads.append(Path(rec.image_uri).read_bytes())
    return payloads if n > 1 else payloads[0]


def post_sketch(client, payload, **params):
    return client.post("/api/retrieve", params=params,
                       files={"file": ("sketch.png", payload, "image/png")})


# ---------------------------------------------------------------------------

def test_health(service_env):
    r = service_env["client"].get("/api/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["gallery_size"] == len(service_env["index"].ids)
    assert body["checkpoint_hash"] == hashlib.sha256(
        service_env["ckpt"].read_bytes()).hexdigest()
    assert body["index_hash"] == hashlib.sha256(
        service_env["index_path"].read_bytes()).hexdigest()


def test_retrieve_k1(service_env):
    r = post_sketch(service_env["client"], sketch_bytes(service_env["manifest"]), k=1)
    assert r.status_code == 200
    body = r.json()
    assert len(body["entries"]) == 1
    entry = body["entries"][0]
    for key in ("shape_id", "category", "score", "thumbnail_url", "view_urls"):
        assert key in entry
    assert set(body["timing_ms"]) == {"embed", "rank", "serialize"}
    assert body["query_token"]


def test_entries_sorted_and_sized(service_env):
    r = post_sketch(service_env["client"], sketch_bytes(service_env["manifest"]), k=5)
    body = r.json()
    assert len(body["entries"]) == 5
    scores = [e["score"] for e in body["entries"]]
    assert scores == sorted(scores, reverse=True)


def test_base64_payload(service_env):
    payload = sketch_bytes(service_env["manifest"])
    r = service_env["client"].post(
        "/api/retrieve", params={"k": 2},
        json={"image_b64": base64.b64encode(payload).decode()})
    assert r.status_code == 200
    assert len(r.json()["entries"]) == 2


def test_k_out_of_range(service_env):
    payload = sketch_bytes(service_env["manifest"])
    for bad_k in (0, len(service_env["index"].ids) + 1, -3):
        r = post_sketch(service_env["client"], payload, k=bad_k)
        assert r.status_code == 422


def test_undecodable_image(service_env):
    r = post_sketch(service_env["client"], b"this is not an image", k=1)
    assert r.status_code == 400


def test_missing_payload(service_env):
    r = service_env["client"].post("/api/retrieve", params={"k": 1}, json={})
    assert r.status_code == 400


def test_thumbnail_round_trip(service_env):
    rec = service_env["manifest"].shapes[0]
    url = f"/api/shapes/{rec.shape_id}/views/0"
    r1 = service_env["client"].get(url)
    assert r1.status_code == 200
    assert r1.content == Path(rec.view_uris[0]).read_bytes()
    assert r1.headers["content-type"].startswith("image/")
    # cache determinism
    r2 = service_env["client"].get(url)
    assert r2.content == r1.content


def test_thumbnail_404(service_env):
    assert service_env["client"].get("/api/shapes/nope/views/0").status_code == 404
    rec = service_env["manifest"].shapes[0]
    r = service_env["client"].get(f"/api/shapes/{rec.shape_id}/views/99")
    assert r.status_code == 404


def test_identical_requests_identical_results(service_env):
    payload = sketch_bytes(service_env["manifest"])
    a = post_sketch(service_env["client"], payload, k=4).json()
    b = post_sketch(service_env["client"], payload, k=4).json()
    assert a["entries"] == b["entries"]
    assert a["query_token"] != b["query_token"]


def test_online_offline_ordering_equivalence(service_env):
    """Service ranking must equal the offline rank() output bit for bit."""
    model = service_env["model"]
    index = service_env["index"]
    client = service_env["client"]
    k = len(index.ids)
    for payload in sketch_bytes(service_env["manifest"], n=5):
        from PIL import Image
        sketch = rasterize_sketch(Image.open(io.BytesIO(payload)), IMAGE_SIZE)
        with torch.no_grad():
            q = model.embed_sketch(sketch, "a sketch of an object",
                                   sketch_epsilon_seed("service-query")).numpy()
        offline = rank(q, index)
        online = post_sketch(client, payload, k=k).json()["entries"]
        assert tuple(e["shape_id"] for e in online) == offline.gallery_ids


def test_startup_refuses_hash_mismatch(service_env, tmp_path):
    stale = replace(service_env["manifest"],
                    sketches=service_env["manifest"].sketches[:-1])
    stale_path = tmp_path / "stale.tsv"
    save_manifest(stale, stale_path)
    svc = replace(service_env["svc"], manifest_path=str(stale_path))
    with pytest.raises(RuntimeError):
        create_app(svc)
