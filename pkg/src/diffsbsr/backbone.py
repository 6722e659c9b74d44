"""Frozen diffusion backbone: latent encoding, forward diffusion, and
multi-scale feature capture from a single conditioned denoiser pass.

Six intermediate maps are hooked per pass: three down-stage outputs with
channels (320, 640, 1280) at strides (8, 16, 32) and three up-stage outputs
with channels (1280, 640, 320) at strides (32, 16, 8).

The mock backbone is a deterministic, asset-free implementation of the full
handle contract: average-pool latent encoder, seeded fixed-weight denoiser
blocks with text/image cross-attention and local residual hooks, and a
hash-based text encoder. It is differentiable with respect to every
conditioning input, so adapters and prompts train against it.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import (BadImageSize, HookMismatch, InvalidTimestep,
                     NonFiniteFeatures)

CHANNELS = (320, 640, 1280, 1280, 640, 320)
STRIDES = (8, 16, 32, 32, 16, 8)
DOWN_CHANNELS = (320, 640, 1280)
UP_CHANNELS = (1280, 640, 320)
CONTEXT_DIM = 2048
HARD_SEQ_LEN = 77
HARD_DIM = 768
POOLED_DIM = 1280
T_MAX = 1000
DEFAULT_TIMESTEP = 220
LATENT_CHANNELS = 4


class NoiseSchedule:
    """Cumulative-product schedule over a linear beta ramp; alpha_bar(0)=1."""

    def __init__(self, t_max: int = T_MAX, beta_start: float = 1e-4, beta_end: float = 0.02):
        self.t_max = t_max
        betas = torch.linspace(beta_start, beta_end, t_max, dtype=torch.float64)
        bars = torch.cumprod(1.0 - betas, dim=0)
        self._alpha_bars = torch.cat([torch.ones(1, dtype=torch.float64), bars])

    def alpha_bar(self, t: int) -> float:
        if not (0 <= t <= self.t_max):
            raise InvalidTimestep(f"timestep {t} outside [0, {self.t_max}]")
        return float(self._alpha_bars[t])


def add_noise(z0: torch.Tensor, t: int, epsilon_seed: int, schedule) -> torch.Tensor:
    """Forward diffusion: z_t = sqrt(a)*z0 + sqrt(1-a)*eps, eps ~ N(0, I)
    drawn from a generator seeded with epsilon_seed."""
    alpha_bar = schedule(t) if callable(schedule) else schedule.alpha_bar(t)
    gen = torch.Generator().manual_seed(epsilon_seed)
    eps = torch.randn(z0.shape, generator=gen, dtype=z0.dtype)
    return math.sqrt(alpha_bar) * z0 + math.sqrt(1.0 - alpha_bar) * eps


@dataclass(frozen=True)
class MultiScaleFeatures:
    """The six hooked maps, ordered down 1-3 then up 1-3, each (C, H, W)."""
    maps: tuple[torch.Tensor, ...]

    def __post_init__(self):
        if len(self.maps) != 6:
            raise HookMismatch(f"expected 6 hooked maps, got {len(self.maps)}")
        for m, c in zip(self.maps, CHANNELS):
            if m.shape[0] != c:
                raise HookMismatch(f"channel mismatch: got {tuple(m.shape)}, want {c} channels")


@dataclass
class DenoiserConditioning:
    """Everything a conditioned denoiser pass consumes.

    image_kv: six (to_k, to_v) projection pairs for the decoupled image
    cross-attention, one per attention site; zero weights make the image
    branch contribute exactly zero.
    local_residuals: callable (block_idx, (H, W)) -> (C, H, W) residual map
    applied inside the three down-block hooks, or None.
    """
    context: torch.Tensor            # (77, 2048)
    pooled: torch.Tensor             # (1280,)
    image_tokens: torch.Tensor | None = None   # (T, 2048)
    image_kv: list | None = None
    ip_scale: float = 1.0
    local_residuals: object | None = None


def text_token_rows(text: str, seq_len: int = HARD_SEQ_LEN, dim: int = HARD_DIM) -> np.ndarray:
    """Hash-seeded token encoder: one fixed Gaussian row per (position,
    token), padded rows seeded with a pad marker."""
    tokens = [w for w in "".join(c if c.isalnum() else " " for c in text.lower()).split()]
    rows = np.empty((seq_len, dim), dtype=np.float64)
    for i in range(seq_len):
        tok = tokens[i] if i < len(tokens) else "<pad>"
        seed = int.from_bytes(hashlib.sha256(f"{i}|{tok}".encode()).digest()[:8], "big")
        rows[i] = np.random.default_rng(seed).standard_normal(dim) / math.sqrt(dim)
    return rows


def _seeded(shape: tuple[int, ...], seed: int, scale: float | None = None) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    t = torch.randn(shape, generator=gen, dtype=torch.float32)
    if scale is None:
        scale = 1.0 / math.sqrt(shape[-1])
    return t * scale


class MockDenoiserBlock(torch.nn.Module):
    """One hookable stage: fixed input projection, timestep/pooled biases,
    and frozen text cross-attention plus a trainable decoupled image branch."""

    def __init__(self, in_channels: int, out_channels: int, seed: int):
        super().__init__()
        self.out_channels = out_channels
        self.register_buffer("w_in", _seeded((in_channels, out_channels), seed))
        self.register_buffer("w_time", _seeded((2, out_channels), seed + 1))
        self.register_buffer("w_pooled", _seeded((POOLED_DIM, out_channels), seed + 2))
        # factorized K/V projections: one narrow context read shared per
        # branch keeps the frozen pass cheap on CPU without losing
        # differentiability with respect to the context
        rank = 32
        self.register_buffer("w_k_in", _seeded((CONTEXT_DIM, rank), seed + 3))
        self.register_buffer("w_k_out", _seeded((rank, out_channels), seed + 3000))
        self.register_buffer("w_v_in", _seeded((CONTEXT_DIM, rank), seed + 4))
        self.register_buffer("w_v_out", _seeded((rank, out_channels), seed + 4000))

    def forward(self, x: torch.Tensor, t: int, cond: DenoiserConditioning,
                site: int) -> torch.Tensor:
        # x: (C_in, H, W) already at this block's spatial resolution
        h = torch.einsum("chw,cd->dhw", x, self.w_in)
        t_feat = torch.tensor([math.sin(t / 100.0), math.cos(t / 100.0)])
        bias = t_feat @ self.w_time
        bias = bias + cond.pooled @ self.w_pooled

        q = h.mean(dim=(1, 2))  # (C,)
        scale = 1.0 / math.sqrt(self.out_channels)
        k = (cond.context @ self.w_k_in) @ self.w_k_out   # (77, C)
        v = (cond.context @ self.w_v_in) @ self.w_v_out
        attn = torch.softmax(k @ q * scale, dim=0)
        bias = bias + attn @ v

        if cond.image_tokens is not None and cond.image_kv is not None:
            to_k, to_v = cond.image_kv[site]
            ik = to_k(cond.image_tokens)     # (T, C)
            iv = to_v(cond.image_tokens)
            iattn = torch.softmax(ik @ q * scale, dim=0)
            bias = bias + cond.ip_scale * (iattn @ iv)

        return F.gelu(h + bias.view(-1, 1, 1))


class MockDenoiser(torch.nn.Module):
    """Weightless-in-spirit denoiser: all parameters are fixed buffers
    generated from a constant seed, so the backbone is frozen by
    construction and its outputs are pure in the inputs."""

    def __init__(self, latent_channels: int = LATENT_CHANNELS, seed: int = 1301):
        super().__init__()
        self.down = torch.nn.ModuleList([
            MockDenoiserBlock(latent_channels, 320, seed + 10),
            MockDenoiserBlock(320, 640, seed + 20),
            MockDenoiserBlock(640, 1280, seed + 30),
        ])
        self.up = torch.nn.ModuleList([
            MockDenoiserBlock(1280, 1280, seed + 40),
            MockDenoiserBlock(1280, 640, seed + 50),
            MockDenoiserBlock(640, 320, seed + 60),
        ])
        self.register_buffer("skip_gain", torch.tensor([0.5, 0.5, 0.5]))
        self.register_buffer("w_out", _seeded((320, latent_channels), seed + 70))

    def run(self, z_t: torch.Tensor, t: int, cond: DenoiserConditioning
            ) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """One conditioned pass; returns (noise estimate, six hooked maps)."""
        hooked: list[torch.Tensor] = []
        x = z_t
        down_maps: list[torch.Tensor] = []
        for n, block in enumerate(self.down):
            if n > 0:
                x = F.avg_pool2d(x.unsqueeze(0), kernel_size=2, ceil_mode=True).squeeze(0)
            f = block(x, t, cond, site=n)
            if cond.local_residuals is not None:
                res = cond.local_residuals(n, f.shape[1:])
                if res is not None:
                    f = f + res
            down_maps.append(f)
            hooked.append(f)
            x = f

        u = down_maps[2]
        for j, block in enumerate(self.up):
            if j > 0:
                target = down_maps[2 - j].shape[1:]
                u = F.interpolate(u.unsqueeze(0), size=target, mode="nearest").squeeze(0)
            f = block(u, t, cond, site=3 + j)
            f = f + self.skip_gain[j] * down_maps[2 - j]
            hooked.append(f)
            u = f

        noise = torch.einsum("chw,cd->dhw", u, self.w_out)
        return noise, hooked


class MockBackbone:
    """Deterministic stand-in implementing the full backbone handle."""

    frozen = True
    latent_channels = LATENT_CHANNELS

    def __init__(self, seed: int = 1301):
        self.schedule = NoiseSchedule()
        self.denoiser = MockDenoiser(latent_channels=self.latent_channels, seed=seed)
        self.denoiser.eval()
        gen = torch.Generator().manual_seed(seed + 5)
        self._lift = torch.randn((3, self.latent_channels), generator=gen) / math.sqrt(3)
        self._text_cache: dict[str, torch.Tensor] = {}

    def encode_latent(self, image: torch.Tensor) -> torch.Tensor:
        """(3, H, W) in [0,1] -> (d, H/8, W/8): 8x8 average pool then a
        fixed linear channel lift. Deterministic (distribution mean)."""
        if image.dim() != 3 or image.shape[0] != 3:
            raise BadImageSize(f"expected (3, H, W) image tensor, got {tuple(image.shape)}")
        _, h, w = image.shape
        if h % 8 or w % 8:
            raise BadImageSize(f"image dims must be divisible by 8, got {h}x{w}")
        pooled = F.avg_pool2d(image.unsqueeze(0), kernel_size=8).squeeze(0)
        return torch.einsum("chw,cd->dhw", pooled, self._lift)

    def text_encode_L(self, text: str) -> torch.Tensor:
        cached = self._text_cache.get(text)
        if cached is None:
            cached = torch.from_numpy(text_token_rows(text)).to(torch.float32)
            self._text_cache[text] = cached
        return cached

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, buf in sorted(self.denoiser.state_dict().items()):
            h.update(name.encode())
            h.update(buf.numpy().tobytes())
        h.update(self._lift.numpy().tobytes())
        return h.hexdigest()


def image_to_tensor(image: Image.Image | torch.Tensor, size: int | None = None) -> torch.Tensor:
    if isinstance(image, torch.Tensor):
        return image
    if size is not None:
        image = image.resize((size, size), Image.BILINEAR)
    arr = np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def item_epsilon_seed(item_id: str) -> int:
    """Stable per-item noise seed for reproducible evaluation embeddings."""
    return int.from_bytes(hashlib.sha256(item_id.encode()).digest()[:8], "big") % (2**31)


def extract_features(image: Image.Image | torch.Tensor, conditioning: DenoiserConditioning,
                     backbone, t: int = DEFAULT_TIMESTEP, epsilon_seed: int = 0,
                     ) -> MultiScaleFeatures:
    """Encode, noise to timestep t, run one conditioned denoiser pass, and
    return the six hooked maps (the noise estimate is discarded)."""
    img = image_to_tensor(image)
    z0 = backbone.encode_latent(img)
    z_t = add_noise(z0, t, epsilon_seed, backbone.schedule)
    _, hooked = backbone.denoiser.run(z_t, t, conditioning)
    if len(hooked) != 6:
        raise HookMismatch(f"backbone exposed {len(hooked)} hook points, need 6")
    for m in hooked:
        if not torch.isfinite(m).all():
            raise NonFiniteFeatures("non-finite values in hooked feature map")
    return MultiScaleFeatures(maps=tuple(hooked))
