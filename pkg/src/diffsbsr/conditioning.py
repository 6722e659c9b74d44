"""Multimodal conditioning: captioner hard prompts, learnable soft prompts,
global token projection, and local patch residual injection.

Everything trainable for the conditioning path lives in `InjectionParams`
and `SoftPrompt`; the frozen backbone consumes the assembled
`DenoiserConditioning` built by `build_conditioning`.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from PIL import Image

from .backbone import (CONTEXT_DIM, DOWN_CHANNELS, HARD_DIM, HARD_SEQ_LEN,
                       POOLED_DIM, DenoiserConditioning)
from .errors import CaptionerUnavailable, ShapeMismatch

SKETCH_PREFIX = "a sketch of"
RENDER_PREFIX = "a 3D rendering of"

DEFAULT_T_TOKENS = 4
DEFAULT_IP_SCALE = 1.0
DEFAULT_SOFT_INIT_STD = 0.02
DEFAULT_SOFT_L2 = 1e-4


@dataclass(frozen=True)
class VisualTokens:
    cls_token: torch.Tensor    # (clip_dim,)
    patch_tokens: torch.Tensor  # (p, p, clip_dim)

    def __post_init__(self):
        if self.patch_tokens.dim() != 3 or self.patch_tokens.shape[0] != self.patch_tokens.shape[1]:
            raise ShapeMismatch("patch token grid must be square (p, p, dim)")


@dataclass(frozen=True)
class HardPrompt:
    text: str
    embedding: torch.Tensor  # (77, 768)

    def __post_init__(self):
        if tuple(self.embedding.shape) != (HARD_SEQ_LEN, HARD_DIM):
            raise ShapeMismatch(
                f"hard prompt must be ({HARD_SEQ_LEN}, {HARD_DIM}), got {tuple(self.embedding.shape)}")


class StubCaptioner:
    """Asset-free captioner: completes the modality prefix with a known
    subject string (typically the manifest category)."""

    def caption(self, image, prefix: str, subject: str = "an object") -> str:
        return f"{prefix} {subject}"


def caption(image: Image.Image, modality: str, captioner, subject: str = "an object") -> str:
    """Generate a hard-prompt caption with the modality-specific prefix."""
    if captioner is None:
        raise CaptionerUnavailable("no captioner configured")
    if modality == "sketch":
        prefix = SKETCH_PREFIX
    elif modality == "render":
        prefix = RENDER_PREFIX
    else:
        raise ValueError(f"unknown modality {modality!r}")
    return captioner.caption(image, prefix, subject)


def encode_hard_prompt(text: str, backbone) -> HardPrompt:
    if not text:
        raise ValueError("hard prompt text must be non-empty")
    return HardPrompt(text=text, embedding=backbone.text_encode_L(text))


class SoftPrompt(torch.nn.Module):
    """Learnable (m+1) x 1280 prompt; row 0 routes to the time embedding,
    rows 1..m join the cross-attention context."""

    def __init__(self, init_std: float = DEFAULT_SOFT_INIT_STD, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        init = torch.randn((HARD_SEQ_LEN + 1, POOLED_DIM), generator=gen) * init_std
        self.values = torch.nn.Parameter(init)

    def l2_penalty(self) -> torch.Tensor:
        return (self.values ** 2).sum()


def build_context(hard: HardPrompt | torch.Tensor, soft: SoftPrompt | torch.Tensor
                  ) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-token concat of hard (768) and soft rows 1..77 (1280) into a
    (77, 2048) context; pooled output is soft row 0."""
    hard_emb = hard.embedding if isinstance(hard, HardPrompt) else hard
    soft_vals = soft.values if isinstance(soft, SoftPrompt) else soft
    if tuple(hard_emb.shape) != (HARD_SEQ_LEN, HARD_DIM):
        raise ShapeMismatch(f"bad hard prompt shape {tuple(hard_emb.shape)}")
    if tuple(soft_vals.shape) != (HARD_SEQ_LEN + 1, POOLED_DIM):
        raise ShapeMismatch(f"bad soft prompt shape {tuple(soft_vals.shape)}")
    context = torch.cat([hard_emb, soft_vals[1:]], dim=1)
    return context, soft_vals[0]


class InjectionParams(torch.nn.Module):
    """Trainable visual-injection parameters.

    image_proj maps the encoder class token to T cross-attention tokens;
    kv_proj holds one zero-initialized key/value pair per attention site
    (decoupled image attention); local_kernels are three zero-initialized
    1x1 channel maps from the patch-token width to each down-block width.
    Zero initialization makes the whole module an exact no-op.
    """

    def __init__(self, clip_dim: int, t_tokens: int = DEFAULT_T_TOKENS,
                 ip_scale: float = DEFAULT_IP_SCALE, seed: int = 0):
        super().__init__()
        self.t_tokens = t_tokens
        self.ip_scale = ip_scale
        gen = torch.Generator().manual_seed(seed + 17)
        self.image_proj = torch.nn.Linear(clip_dim, t_tokens * CONTEXT_DIM)
        with torch.no_grad():
            self.image_proj.weight.copy_(
                torch.randn(self.image_proj.weight.shape, generator=gen) * 0.02)
            self.image_proj.bias.zero_()
        self.kv_proj = torch.nn.ModuleList()
        for c in DOWN_CHANNELS + tuple(reversed(DOWN_CHANNELS)):
            pair = torch.nn.ModuleDict({
                "to_k": torch.nn.Linear(CONTEXT_DIM, c, bias=False),
                "to_v": torch.nn.Linear(CONTEXT_DIM, c, bias=False),
            })
            torch.nn.init.zeros_(pair["to_k"].weight)
            torch.nn.init.zeros_(pair["to_v"].weight)
            self.kv_proj.append(pair)
        self.local_kernels = torch.nn.ModuleList(
            [torch.nn.Linear(clip_dim, c, bias=False) for c in DOWN_CHANNELS])
        for k in self.local_kernels:
            torch.nn.init.zeros_(k.weight)

    def kv_pairs(self) -> list[tuple[torch.nn.Module, torch.nn.Module]]:
        return [(p["to_k"], p["to_v"]) for p in self.kv_proj]

    def project_global(self, cls_token: torch.Tensor) -> torch.Tensor:
        """Eq.-6-style projection: class token -> (T, d_c) tokens."""
        return self.image_proj(cls_token).view(self.t_tokens, CONTEXT_DIM)


def inject_local(block_features: torch.Tensor, patch_tokens: torch.Tensor,
                 kernel: torch.nn.Module) -> torch.Tensor:
    """Residual local injection: f + resize(channel_map(patch_tokens))."""
    res = local_residual(patch_tokens, kernel, block_features.shape[1:])
    if res.shape != block_features.shape:
        raise ShapeMismatch(f"residual {tuple(res.shape)} vs map {tuple(block_features.shape)}")
    return block_features + res


def local_residual(patch_tokens: torch.Tensor, kernel: torch.nn.Module,
                   spatial: tuple[int, int]) -> torch.Tensor:
    """Channel-map the (p, p, dim) patch grid with a 1x1 kernel and
    bilinearly resize to the block's spatial dims."""
    mapped = kernel(patch_tokens)                    # (p, p, C)
    grid = mapped.permute(2, 0, 1).unsqueeze(0)      # (1, C, p, p)
    resized = F.interpolate(grid, size=tuple(spatial), mode="bilinear", align_corners=False)
    return resized.squeeze(0)


@dataclass
class ConditioningToggles:
    """The ablation switches: each disables one conditioning stream."""
    use_global: bool = True
    use_local: bool = True
    use_hard: bool = True
    use_soft: bool = True


def build_conditioning(hard: HardPrompt, soft: SoftPrompt,
                       visual: VisualTokens | None,
                       params: InjectionParams | None,
                       toggles: ConditioningToggles | None = None,
                       ) -> DenoiserConditioning:
    """Assemble the denoiser conditioning from the four streams."""
    toggles = toggles or ConditioningToggles()
    hard_emb = hard.embedding if toggles.use_hard else torch.zeros_like(hard.embedding)
    soft_vals = soft.values if toggles.use_soft else torch.zeros_like(soft.values)
    context, pooled = build_context(hard_emb, soft_vals)

    image_tokens = None
    image_kv = None
    ip_scale = DEFAULT_IP_SCALE
    if toggles.use_global and visual is not None and params is not None:
        image_tokens = params.project_global(visual.cls_token)
        image_kv = params.kv_pairs()
        ip_scale = params.ip_scale

    local_fn = None
    if toggles.use_local and visual is not None and params is not None:
        patch_tokens = visual.patch_tokens

        def local_fn(block_idx: int, spatial: tuple[int, int]) -> torch.Tensor | None:
            # injection targets the down blocks only
            if block_idx >= 3:
                return None
            return local_residual(patch_tokens, params.local_kernels[block_idx], spatial)

    return DenoiserConditioning(context=context, pooled=pooled,
                                image_tokens=image_tokens, image_kv=image_kv,
                                ip_scale=ip_scale, local_residuals=local_fn)
