"""Per-scale adapters, softmax-weighted fusion, and cross-view pooling.

Every embedding published to the metric space is l2-normalized, so all
downstream inner products are cosine similarities. Fusion and view pooling
operate on pre-normalization vectors; normalization happens last.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .backbone import CHANNELS
from .errors import CountMismatch, EmptyViewSet, ShapeMismatch

EMBED_DIM = 1280
N_SCALES = 6


class ResidualRefineBlock(torch.nn.Module):
    """Width-preserving residual block: (norm -> SiLU -> 1x1 conv) twice,
    plus skip."""

    def __init__(self, width: int = EMBED_DIM, groups: int = 32):
        super().__init__()
        self.norm1 = torch.nn.GroupNorm(groups, width)
        self.conv1 = torch.nn.Conv2d(width, width, kernel_size=1)
        self.norm2 = torch.nn.GroupNorm(groups, width)
        self.conv2 = torch.nn.Conv2d(width, width, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return x + h


class ScaleAdapter(torch.nn.Module):
    """Project one enhanced map to 1280 channels, refine through three
    residual blocks, and global-max-pool the spatial dims."""

    def __init__(self, in_channels: int, identity: bool = False):
        super().__init__()
        self.in_channels = in_channels
        self.identity = identity
        if identity:
            if in_channels != EMBED_DIM:
                raise ShapeMismatch("identity adapter requires 1280 input channels")
            self.proj = torch.nn.Identity()
            self.refine = torch.nn.Identity()
        else:
            self.proj = torch.nn.Conv2d(in_channels, EMBED_DIM, kernel_size=1)
            self.refine = torch.nn.Sequential(*[ResidualRefineBlock() for _ in range(3)])

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        """(C, H, W) -> (1280,), or batched (N, C, H, W) -> (N, 1280)."""
        batched = feature_map.dim() == 4
        x = feature_map if batched else feature_map.unsqueeze(0)
        if x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"adapter expects {self.in_channels} channels, got {x.shape[1]}")
        x = self.refine(self.proj(x))
        pooled = torch.amax(x, dim=(2, 3))
        return pooled if batched else pooled.squeeze(0)


def adapt_scale(feature_map: torch.Tensor, adapter: ScaleAdapter) -> torch.Tensor:
    return adapter(feature_map)


def make_adapters() -> torch.nn.ModuleList:
    """One adapter per hooked scale, in capture order."""
    return torch.nn.ModuleList([ScaleAdapter(c) for c in CHANNELS])


class FusionWeights(torch.nn.Module):
    """Learnable per-scale logits; zeros initialization gives uniform
    weights across the six scales."""

    def __init__(self):
        super().__init__()
        self.alpha = torch.nn.Parameter(torch.zeros(N_SCALES))

    def weights(self) -> torch.Tensor:
        return torch.softmax(self.alpha, dim=0)


def fuse_scales(vectors: list[torch.Tensor] | torch.Tensor,
                alpha: torch.Tensor | FusionWeights) -> torch.Tensor:
    """Softmax-weighted sum of the six per-scale vectors (pre-normalization)."""
    if isinstance(vectors, (list, tuple)):
        if len(vectors) != N_SCALES:
            raise CountMismatch(f"expected {N_SCALES} scale vectors, got {len(vectors)}")
        stacked = torch.stack(list(vectors))
    else:
        if vectors.shape[0] != N_SCALES:
            raise CountMismatch(f"expected {N_SCALES} scale vectors, got {vectors.shape[0]}")
        stacked = vectors
    if isinstance(alpha, FusionWeights):
        w = alpha.weights()
    else:
        w = torch.softmax(alpha, dim=0)
    return w @ stacked


def pool_views(view_vectors: list[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    """Elementwise max across views (pre-normalization vectors), then
    l2-normalize."""
    if isinstance(view_vectors, (list, tuple)):
        if not view_vectors:
            raise EmptyViewSet("cannot pool an empty view set")
        stacked = torch.stack(list(view_vectors))
    else:
        if view_vectors.numel() == 0:
            raise EmptyViewSet("cannot pool an empty view set")
        stacked = view_vectors
    return normalize(torch.amax(stacked, dim=0))


def normalize(vector: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.normalize(vector, dim=-1)


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray
    item_id: str
    modality: str  # sketch | shape | view
    label: str | None = None


# ---------------------------------------------------------------------------
# embedding store: binary matrix with an id/label table plus a text sidecar

_MAGIC = b"DSBE"
_VERSION = 1


def save_embeddings(path: str | Path, ids: list[str], labels: list[str],
                    matrix: np.ndarray) -> None:
    path = Path(path)
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    count, dim = matrix.shape
    table = "\n".join(f"{i}\t{l}" for i, l in zip(ids, labels)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", _VERSION, count, dim))
        f.write(struct.pack("<I", len(table)))
        f.write(table)
        f.write(matrix.tobytes())
    sidecar = path.with_suffix(path.suffix + ".idx")
    sidecar.write_text(
        "\n".join(f"{n}\t{i}\t{l}" for n, (i, l) in enumerate(zip(ids, labels))) + "\n",
        encoding="utf-8")


def load_embeddings(path: str | Path) -> tuple[list[str], list[str], np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise CountMismatch(f"not an embedding store: {path}")
        version, count, dim = struct.unpack("<III", f.read(12))
        if version != _VERSION:
            raise CountMismatch(f"unsupported embedding store version {version}")
        (table_len,) = struct.unpack("<I", f.read(4))
        table = f.read(table_len).decode("utf-8")
        matrix = np.frombuffer(f.read(count * dim * 4), dtype=np.float32).reshape(count, dim)
    ids, labels = [], []
    if table:
        for line in table.split("\n"):
            i, l = line.split("\t")
            ids.append(i)
            labels.append(l)
    return ids, labels, matrix.copy()
