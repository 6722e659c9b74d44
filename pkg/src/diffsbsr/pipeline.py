"""End-to-end embedding pipeline: frozen backbone + trainable conditioning,
adapters, and fusion, producing unit-norm 1280-dim embeddings for sketches
and 3D shapes."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch
from PIL import Image

from . import aggregation, conditioning
from .backbone import DEFAULT_TIMESTEP, extract_features, image_to_tensor, item_epsilon_seed
from .conditioning import (ConditioningToggles, InjectionParams, SoftPrompt,
                           StubCaptioner, build_conditioning, encode_hard_prompt)
from .manifest import DatasetManifest


@dataclass
class PipelineConfig:
    image_size: int = 64           # desk-scale default; 1024 is backbone-native
    timestep: int = DEFAULT_TIMESTEP
    t_tokens: int = conditioning.DEFAULT_T_TOKENS
    ip_scale: float = conditioning.DEFAULT_IP_SCALE
    soft_init_std: float = conditioning.DEFAULT_SOFT_INIT_STD
    soft_l2: float = conditioning.DEFAULT_SOFT_L2
    toggles: ConditioningToggles = field(default_factory=ConditioningToggles)


class RetrievalModel(torch.nn.Module):
    """All trainable state of the retrieval framework; the backbone and the
    vision-language encoder are frozen external handles."""

    def __init__(self, backbone, clip_encoder, class_names: list[str],
                 config: PipelineConfig | None = None, seed: int = 0):
        super().__init__()
        from .losses import ClassifierHead

        self.config = config or PipelineConfig()
        self.backbone = backbone
        self.clip = clip_encoder
        self.soft_prompt = SoftPrompt(init_std=self.config.soft_init_std, seed=seed)
        self.injection = InjectionParams(clip_dim=clip_encoder.embed_dim,
                                         t_tokens=self.config.t_tokens,
                                         ip_scale=self.config.ip_scale, seed=seed)
        self.adapters = aggregation.make_adapters()
        self.fusion = aggregation.FusionWeights()
        self.cls_head = ClassifierHead(class_names)
        self.captioner = StubCaptioner()

    def embed_images(self, images: list, caption_texts: list[str],
                     epsilon_seeds: list[int]) -> torch.Tensor:
        """Pre-normalization fused vectors for a batch of images, (N, 1280).
        The frozen backbone runs per image; the adapter stack runs once per
        scale on the stacked maps."""
        per_scale: list[list[torch.Tensor]] = [[] for _ in range(aggregation.N_SCALES)]
        for image, caption_text, epsilon_seed in zip(images, caption_texts, epsilon_seeds):
            if not isinstance(image, torch.Tensor):
                image = image_to_tensor(image, size=self.config.image_size)
            pil_view = _tensor_to_pil(image)
            cls_np, patch_np = self.clip.encode_visual_tokens(pil_view)
            visual = conditioning.VisualTokens(
                cls_token=torch.from_numpy(np.asarray(cls_np)).to(torch.float32),
                patch_tokens=torch.from_numpy(np.asarray(patch_np)).to(torch.float32))
            hard = encode_hard_prompt(caption_text, self.backbone)
            cond = build_conditioning(hard, self.soft_prompt, visual, self.injection,
                                      self.config.toggles)
            feats = extract_features(image, cond, self.backbone,
                                     t=self.config.timestep, epsilon_seed=epsilon_seed)
            for k, fmap in enumerate(feats.maps):
                per_scale[k].append(fmap)
        scale_vecs = [adapter(torch.stack(maps))
                      for adapter, maps in zip(self.adapters, per_scale)]  # each (N, 1280)
        w = self.fusion.weights()
        return torch.einsum("k,knd->nd", w, torch.stack(scale_vecs))

    def embed_image(self, image: Image.Image | torch.Tensor, caption_text: str,
                    epsilon_seed: int) -> torch.Tensor:
        """Pre-normalization fused 1280-vector for one image."""
        return self.embed_images([image], [caption_text], [epsilon_seed])[0]

    def embed_sketch(self, image, caption_text: str, epsilon_seed: int) -> torch.Tensor:
        return aggregation.normalize(self.embed_image(image, caption_text, epsilon_seed))

    def embed_shape(self, views: list, caption_texts: list[str],
                    epsilon_seeds: list[int]) -> tuple[torch.Tensor, torch.Tensor]:
        """(shape embedding, per-view unit embeddings). Views are pooled
        pre-normalization, then normalized."""
        prenorm = self.embed_images(views, caption_texts, epsilon_seeds)
        shape_emb = aggregation.pool_views(prenorm)
        view_embs = aggregation.normalize(prenorm)
        return shape_emb, view_embs

    def soft_l2_penalty(self) -> torch.Tensor:
        return self.config.soft_l2 * self.soft_prompt.l2_penalty()

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def decayed_and_plain_parameters(self):
        """Weight decay applies to everything except the fusion logits and
        the classifier temperature (scale parameters, not weights)."""
        plain = {id(self.fusion.alpha), id(self.cls_head.temperature)}
        decayed = [p for p in self.trainable_parameters() if id(p) not in plain]
        scales = [p for p in self.trainable_parameters() if id(p) in plain]
        return decayed, scales


def _tensor_to_pil(image: torch.Tensor) -> Image.Image:
    arr = (image.detach().clamp(0, 1).permute(1, 2, 0).numpy() * 255).astype(np.uint8)
    return Image.fromarray(arr, mode="RGB")


def manifest_hash(manifest: DatasetManifest) -> str:
    h = hashlib.sha256()
    h.update(manifest.dataset_name.encode())
    for s in manifest.sketches:
        h.update(f"{s.sketch_id}|{s.category}|{s.role}".encode())
    for r in manifest.shapes:
        h.update(f"{r.shape_id}|{r.category}|{len(r.view_uris)}".encode())
    return h.hexdigest()


def sketch_caption(record, captioner) -> str:
    return conditioning.caption(None, "sketch", captioner, subject=record.category)


def render_caption(record, captioner) -> str:
    return conditioning.caption(None, "render", captioner, subject=record.category)


def sketch_epsilon_seed(sketch_id: str) -> int:
    return item_epsilon_seed(f"sketch:{sketch_id}")


def view_epsilon_seed(shape_id: str, view_index: int) -> int:
    return item_epsilon_seed(f"view:{shape_id}:{view_index}")
