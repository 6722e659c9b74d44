"""Vision-language encoder handles and CLIP-guided view selection.

The mock encoders are deterministic, weightless stand-ins that satisfy the
same contracts as a real pretrained encoder (unit-norm outputs, fixed
dimensionality) so the full pipeline runs without model assets.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import EncoderUnavailable

TEXT_TEMPLATE = "a photo of {}."

MOCK_EMBED_DIM = 64
MOCK_IMAGE_SIDE = 32
_MOCK_PROJECTION_SEED = 7


@dataclass(frozen=True)
class ViewEmbedding:
    shape_id: str
    view_index: int
    vector: np.ndarray


@dataclass(frozen=True)
class TextAnchor:
    category: str
    vector: np.ndarray


@dataclass(frozen=True)
class ViewSelection:
    shape_id: str
    selected_indices: tuple[int, ...]
    scores: tuple[float, ...]


class MockClipEncoder:
    """Deterministic stand-in for a CLIP image/text encoder pair.

    Images: resize to 32x32 RGB, scale to [0,1], flatten, project by a
    fixed Gaussian matrix (seed 7), l2-normalize.
    Text: a unit Gaussian vector seeded by the sha256 of the string.
    """

    embed_dim = MOCK_EMBED_DIM

    def __init__(self):
        rng = np.random.default_rng(_MOCK_PROJECTION_SEED)
        self.projection = rng.standard_normal(
            (MOCK_IMAGE_SIDE * MOCK_IMAGE_SIDE * 3, MOCK_EMBED_DIM)).astype(np.float64)
        patch_rng = np.random.default_rng(_MOCK_PROJECTION_SEED + 1)
        self.patch_projection = patch_rng.standard_normal((8 * 8 * 3, MOCK_EMBED_DIM))

    def encode_image(self, image: Image.Image) -> np.ndarray:
        arr = np.asarray(
            image.convert("RGB").resize((MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE), Image.BILINEAR),
            dtype=np.float64) / 255.0
        v = arr.reshape(-1) @ self.projection
        norm = np.linalg.norm(v)
        if norm == 0:
            v = np.ones(MOCK_EMBED_DIM)
            norm = np.linalg.norm(v)
        return v / norm

    def encode_visual_tokens(self, image: Image.Image) -> tuple[np.ndarray, np.ndarray]:
        """Class token plus a 4x4 patch-token grid (penultimate-layer
        stand-in): each 8x8 patch is flattened and projected by a fixed
        seeded matrix."""
        arr = np.asarray(
            image.convert("RGB").resize((MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE), Image.BILINEAR),
            dtype=np.float64) / 255.0
        cls = self.encode_image(image)
        p = MOCK_IMAGE_SIDE // 8
        patch_proj = self.patch_projection
        patches = np.empty((p, p, MOCK_EMBED_DIM))
        for i in range(p):
            for j in range(p):
                block = arr[i * 8:(i + 1) * 8, j * 8:(j + 1) * 8, :].reshape(-1)
                patches[i, j] = block @ patch_proj / np.sqrt(block.size)
        return cls, patches

    def encode_text(self, text: str) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(MOCK_EMBED_DIM)
        return v / np.linalg.norm(v)


def embed_views(images: list[Image.Image], encoder, shape_id: str = "") -> list[ViewEmbedding]:
    if encoder is None:
        raise EncoderUnavailable("no image encoder configured")
    return [ViewEmbedding(shape_id, i, encoder.encode_image(img))
            for i, img in enumerate(images)]


def text_anchor(category: str, encoder) -> TextAnchor:
    if encoder is None:
        raise EncoderUnavailable("no text encoder configured")
    if not category:
        raise ValueError("category name must be non-empty")
    return TextAnchor(category, encoder.encode_text(TEXT_TEMPLATE.format(category)))


def select_top_k(view_embeddings: list[ViewEmbedding], anchor: TextAnchor | np.ndarray,
                 k: int = 3) -> ViewSelection:
    """Keep the k views most cosine-similar to the anchor.

    Descending score order; ties broken by ascending view index. k larger
    than the candidate count clamps with a warning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not view_embeddings:
        raise ValueError("no candidate views")
    anchor_vec = anchor.vector if isinstance(anchor, TextAnchor) else np.asarray(anchor)
    if k > len(view_embeddings):
        warnings.warn(f"k={k} exceeds candidate count {len(view_embeddings)}; clamping",
                      stacklevel=2)
        k = len(view_embeddings)
    scored = [(float(e.vector @ anchor_vec), e.view_index) for e in view_embeddings]
    order = sorted(range(len(scored)), key=lambda i: (-scored[i][0], scored[i][1]))[:k]
    shape_id = view_embeddings[0].shape_id
    return ViewSelection(
        shape_id=shape_id,
        selected_indices=tuple(scored[i][1] for i in order),
        scores=tuple(scored[i][0] for i in order),
    )


def centrality_anchor(view_embeddings: list[ViewEmbedding]) -> np.ndarray:
    """Label-free fallback: the mean view embedding, renormalized."""
    mean = np.mean([e.vector for e in view_embeddings], axis=0)
    norm = np.linalg.norm(mean)
    return mean / norm if norm > 0 else mean
