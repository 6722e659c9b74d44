"""Retrieval evaluation: gallery index, cosine ranking, the SHREC metric
family, and report emission.

Pinned metric definitions (version "v1", echoed in every report):
  C       per-class gallery count for the query's class
  NN      top-1 retrieval is relevant
  FT      |relevant in top C| / C
  ST      |relevant in top 2C| / C;  ST2 = ST / 2
  E       harmonic precision/recall mean at cutoff 32
  DCG     sum over relevant ranks k of g(k), g(1)=1, g(k)=1/log2(k) for
          k >= 2, divided by the ideal ranking's sum (reported normalized;
          nDCG equals this value)
  MRR     reciprocal rank of the first relevant item
  mAP     mean average precision over all relevant items
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .aggregation import load_embeddings, save_embeddings
from .errors import EmptyIndex
from .manifest import DatasetManifest, SplitSpec

METRICS_VERSION = "v1"
E_MEASURE_CUTOFF = 32


@dataclass(frozen=True)
class EmbeddingIndex:
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    matrix: np.ndarray  # (N, 1280) unit rows

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("gallery ids must be unique")
        norms = np.linalg.norm(self.matrix, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-4):
            raise ValueError("gallery rows must be unit-norm")

    def save(self, path: str | Path) -> None:
        save_embeddings(path, list(self.ids), list(self.labels), self.matrix)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingIndex":
        ids, labels, matrix = load_embeddings(path)
        return cls(tuple(ids), tuple(labels), matrix)


@dataclass(frozen=True)
class RankedList:
    query_id: str
    gallery_ids: tuple[str, ...]
    scores: tuple[float, ...]


@dataclass
class MetricsReport:
    NN: float
    FT: float
    ST: float
    ST2: float
    E: float
    one_minus_E: float
    DCG: float
    nDCG: float
    MRR: float
    mAP: float
    query_count: int
    excluded_count: int = 0
    config: dict = field(default_factory=lambda: {
        "metrics_version": METRICS_VERSION, "e_cutoff": E_MEASURE_CUTOFF})


def rank(query: np.ndarray, index: EmbeddingIndex, query_id: str = "") -> RankedList:
    """Full gallery permutation by descending cosine similarity; ties break
    by ascending gallery id."""
    if len(index.ids) == 0:
        raise EmptyIndex("gallery index is empty")
    scores = index.matrix @ np.asarray(query, dtype=index.matrix.dtype)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], index.ids[i]))
    return RankedList(query_id=query_id,
                      gallery_ids=tuple(index.ids[i] for i in order),
                      scores=tuple(float(scores[i]) for i in order))


def _dcg_gain(k: int) -> float:
    return 1.0 if k == 1 else 1.0 / math.log2(k)


def compute_metrics(ranked_lists: list[RankedList], query_labels: list[str],
                    gallery_labels: dict[str, str]) -> MetricsReport:
    """Average the per-query metric family over all evaluable queries."""
    per_query: list[dict[str, float]] = []
    excluded = 0
    for ranked, qlabel in zip(ranked_lists, query_labels):
        rel = [gallery_labels[g] == qlabel for g in ranked.gallery_ids]
        c = sum(rel)
        if c == 0:
            warnings.warn(f"query {ranked.query_id!r} has no relevant gallery item; excluded",
                          stacklevel=2)
            excluded += 1
            continue
        n = len(rel)
        nn = 1.0 if rel[0] else 0.0
        ft = sum(rel[:c]) / c
        st = sum(rel[:min(2 * c, n)]) / c
        cutoff = min(E_MEASURE_CUTOFF, n)
        rel_at_cut = sum(rel[:cutoff])
        prec = rel_at_cut / cutoff
        recall = rel_at_cut / c
        e = 2 * prec * recall / (prec + recall) if (prec + recall) > 0 else 0.0
        dcg = sum(_dcg_gain(k + 1) for k, r in enumerate(rel) if r)
        ideal = sum(_dcg_gain(k) for k in range(1, c + 1))
        ndcg = dcg / ideal
        first = next(k for k, r in enumerate(rel) if r)
        mrr = 1.0 / (first + 1)
        hits = 0
        ap = 0.0
        for k, r in enumerate(rel):
            if r:
                hits += 1
                ap += hits / (k + 1)
        ap /= c
        per_query.append({"NN": nn, "FT": ft, "ST": st, "E": e,
                          "nDCG": ndcg, "MRR": mrr, "mAP": ap})

    if not per_query:
        raise EmptyIndex("no evaluable queries")
    mean = {k: sum(q[k] for q in per_query) / len(per_query) for k in per_query[0]}
    return MetricsReport(
        NN=mean["NN"], FT=mean["FT"], ST=mean["ST"], ST2=mean["ST"] / 2,
        E=mean["E"], one_minus_E=1.0 - mean["E"],
        DCG=mean["nDCG"], nDCG=mean["nDCG"],
        MRR=mean["MRR"], mAP=mean["mAP"],
        query_count=len(per_query), excluded_count=excluded)


def evaluate(model, manifest: DatasetManifest, split: SplitSpec,
             max_views: int = 3) -> tuple[MetricsReport, list[RankedList], EmbeddingIndex]:
    """Zero-shot evaluation: unseen-category sketches are queries and
    unseen-category shapes form the gallery. Per-item epsilon seeds make
    embeddings, rankings, and the report deterministic."""
    import torch

    from .pipeline import sketch_epsilon_seed, view_epsilon_seed
    from .training import _load_sketch_image, _load_view_images

    size = model.config.image_size
    gallery_ids, gallery_labels_list, rows = [], [], []
    with torch.no_grad():
        for rec in manifest.shapes:
            if rec.category not in split.unseen_categories:
                continue
            views = _load_view_images(rec, size, max_views)
            caps = [f"a 3D rendering of {rec.category}"] * len(views)
            seeds = [view_epsilon_seed(rec.shape_id, i) for i in range(len(views))]
            emb, _ = model.embed_shape(views, caps, seeds)
            gallery_ids.append(rec.shape_id)
            gallery_labels_list.append(rec.category)
            rows.append(emb.numpy())
        index = EmbeddingIndex(tuple(gallery_ids), tuple(gallery_labels_list),
                               np.stack(rows).astype(np.float32))

        ranked_lists, query_labels = [], []
        for rec in manifest.sketches:
            if rec.category not in split.unseen_categories or rec.role != "test":
                continue
            img = _load_sketch_image(rec, size)
            cap = rec.caption or f"a sketch of {rec.category}"
            q = model.embed_sketch(img, cap, sketch_epsilon_seed(rec.sketch_id)).numpy()
            ranked_lists.append(rank(q, index, query_id=rec.sketch_id))
            query_labels.append(rec.category)

    gallery_label_map = dict(zip(index.ids, index.labels))
    report = compute_metrics(ranked_lists, query_labels, gallery_label_map)
    return report, ranked_lists, index


# ---------------------------------------------------------------------------
# report emission

def save_report(report: MetricsReport, path: str | Path) -> None:
    payload = {"schema_version": 1, **asdict(report)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> MetricsReport:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    payload.pop("schema_version", None)
    return MetricsReport(**payload)


def confusion_heatmap(ranked_lists: list[RankedList], query_labels: list[str],
                      gallery_labels: dict[str, str], path: str | Path,
                      cell: int = 16) -> np.ndarray:
    """Top-1 category confusion matrix rendered as a heatmap image; rows are
    query categories, columns retrieved categories."""
    cats = sorted(set(query_labels) | set(gallery_labels.values()))
    idx = {c: i for i, c in enumerate(cats)}
    mat = np.zeros((len(cats), len(cats)))
    for ranked, qlabel in zip(ranked_lists, query_labels):
        top1 = gallery_labels[ranked.gallery_ids[0]]
        mat[idx[qlabel], idx[top1]] += 1
    row_sums = mat.sum(axis=1, keepdims=True)
    norm = np.divide(mat, row_sums, out=np.zeros_like(mat), where=row_sums > 0)
    img = (255 * (1.0 - norm)).astype(np.uint8)
    img = np.kron(img, np.ones((cell, cell), dtype=np.uint8))
    Image.fromarray(img, mode="L").save(path)
    return mat


def retrieval_montage(ranked: RankedList, manifest: DatasetManifest,
                      path: str | Path, k: int = 5, thumb: int = 64) -> Image.Image:
    """One query row: the top-k retrieved shapes' first selected views."""
    by_id = {r.shape_id: r for r in manifest.shapes}
    canvas = Image.new("RGB", (thumb * k, thumb), "white")
    for col, gid in enumerate(ranked.gallery_ids[:k]):
        rec = by_id.get(gid)
        if rec and rec.view_uris:
            tile = Image.open(rec.view_uris[0]).convert("RGB").resize((thumb, thumb))
        else:
            tile = Image.new("RGB", (thumb, thumb), "lightgray")
        canvas.paste(tile, (col * thumb, 0))
    canvas.save(path)
    return canvas
