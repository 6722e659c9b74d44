"""Training loop for the lightweight adapter stack against the frozen
backbone: class-balanced batch construction, one-step updates with decoupled
weight decay, checkpointing, and bit-exact resume."""

from __future__ import annotations

import random
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from PIL import Image

from .conditioning import ConditioningToggles
from .errors import CheckpointCorrupt, InsufficientData, NonFiniteLoss
from .losses import CircleTParams, circle_t_batch, total_loss, view_cls_loss
from .manifest import DatasetManifest, ShapeRecord, SketchRecord, SplitSpec
from .pipeline import PipelineConfig, RetrievalModel, manifest_hash
from .rendering import rasterize_sketch

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 0.09
    batch_size: int = 50
    epochs: int = 100
    seed: int = 0
    timestep_t: int = 220
    device_profile: str = "cpu"
    p_categories: int = 5
    k_items: int = 5
    views_per_shape: int = 3
    grad_clip: float = 5.0
    eta: float = 10.0
    checkpoint_every: int = 1   # epochs between periodic checkpoints
    keep_checkpoints: int = 2   # periodic files retained (checkpoints are large)
    use_ske_circle: bool = True
    use_view_circle: bool = True
    use_view_cls: bool = True
    use_ske_cls: bool = False  # excluded from the best objective
    circle: CircleTParams = field(default_factory=CircleTParams)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if min(self.learning_rate, self.weight_decay, self.batch_size, self.epochs) < 0:
            raise ValueError("training hyperparameters must be non-negative")
        self.pipeline.timestep = self.timestep_t


@dataclass
class TrainBatch:
    sketches: list[SketchRecord]
    shapes: list[ShapeRecord]


def build_batch(split: SplitSpec, manifest: DatasetManifest, config: TrainConfig,
                rng: random.Random) -> TrainBatch:
    """Class-balanced sampling: P categories x K sketches x K shapes, all
    drawn from seen categories only."""
    by_sketch = manifest.sketches_by_category()
    by_shape = manifest.shapes_by_category()
    candidates = sorted(c for c in split.seen_categories if by_sketch.get(c))
    if not candidates:
        raise InsufficientData("no seen category has training sketches")
    p = min(config.p_categories, len(candidates))
    cats = rng.sample(candidates, p)
    sketches: list[SketchRecord] = []
    shapes: list[ShapeRecord] = []
    for c in cats:
        if not by_shape.get(c):
            raise InsufficientData(f"category {c!r} has no gallery shape")
        sketches.extend(rng.choices(by_sketch[c], k=config.k_items))
        shapes.extend(rng.choices(by_shape[c], k=config.k_items))
    return TrainBatch(sketches=sketches, shapes=shapes)


def _load_sketch_image(record: SketchRecord, size: int) -> Image.Image:
    return rasterize_sketch(Image.open(record.image_uri), size)


def _load_view_images(record: ShapeRecord, size: int, max_views: int) -> list[Image.Image]:
    uris = record.view_uris[:max_views] if record.view_uris else ()
    if not uris:
        raise InsufficientData(f"shape {record.shape_id} has no rendered views")
    return [Image.open(u).convert("RGB").resize((size, size), Image.BILINEAR) for u in uris]


def train_step(batch: TrainBatch, model: RetrievalModel, optimizer: torch.optim.Optimizer,
               config: TrainConfig, eps_rng: random.Random) -> dict[str, float]:
    """One update on the trainable parameters; the backbone stays frozen.
    Epsilon is redrawn per item per step (stochastic regularization)."""
    size = model.config.image_size
    from .aggregation import normalize, pool_views

    # one batched pass over every image in the step so the adapter stack
    # (the bulk of the trainable parameters) runs once per scale
    images, captions, seeds, sketch_labels = [], [], [], []
    for rec in batch.sketches:
        images.append(_load_sketch_image(rec, size))
        captions.append(rec.caption or f"a sketch of {rec.category}")
        seeds.append(eps_rng.getrandbits(31))
        sketch_labels.append(rec.category)
    n_sketches = len(images)

    shape_labels, view_slices, all_view_labels = [], [], []
    for rec in batch.shapes:
        views = _load_view_images(rec, size, config.views_per_shape)
        start = len(images)
        images.extend(views)
        captions.extend([f"a 3D rendering of {rec.category}"] * len(views))
        seeds.extend(eps_rng.getrandbits(31) for _ in views)
        shape_labels.append(rec.category)
        view_slices.append((start, len(images)))
        all_view_labels.extend([rec.category] * len(views))

    prenorm = model.embed_images(images, captions, seeds)
    ske_t = normalize(prenorm[:n_sketches])
    shp_t = torch.stack([pool_views(prenorm[a:b]) for a, b in view_slices])
    views_t = normalize(prenorm[n_sketches:])

    zero = ske_t.new_zeros(())
    l_ske = circle_t_batch(ske_t, sketch_labels, shp_t, shape_labels,
                           config.circle) if config.use_ske_circle else zero
    l_view = circle_t_batch(shp_t, shape_labels, ske_t, sketch_labels,
                            config.circle) if config.use_view_circle else zero
    l_cls = view_cls_loss(views_t, all_view_labels,
                          model.cls_head) if config.use_view_cls else zero
    loss = total_loss(l_ske, l_view, l_cls, eta=config.eta) + model.soft_l2_penalty()

    if not torch.isfinite(loss):
        raise NonFiniteLoss(
            f"non-finite loss: ske={l_ske.item()} view={l_view.item()} cls={l_cls.item()}")

    optimizer.zero_grad()
    loss.backward()
    if config.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.trainable_parameters(), config.grad_clip)
    optimizer.step()

    return {"loss_ske": float(l_ske.detach()), "loss_view": float(l_view.detach()),
            "loss_cls_view": float(l_cls.detach()), "loss_total": float(loss.detach())}


def make_optimizer(model: RetrievalModel, config: TrainConfig) -> torch.optim.Optimizer:
    decayed, scales = model.decayed_and_plain_parameters()
    try:
        return torch.optim.AdamW(
            [{"params": decayed, "weight_decay": config.weight_decay},
             {"params": scales, "weight_decay": 0.0}],
            lr=config.learning_rate, fused=True)
    except (RuntimeError, ValueError):  # fused kernel unavailable on this build
        return torch.optim.AdamW(
            [{"params": decayed, "weight_decay": config.weight_decay},
             {"params": scales, "weight_decay": 0.0}],
            lr=config.learning_rate)


def save_checkpoint(path: str | Path, model: RetrievalModel,
                    optimizer: torch.optim.Optimizer, step: int,
                    config: TrainConfig, mani_hash: str,
                    batch_rng: random.Random, eps_rng: random.Random) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "step": step,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict(),
        "config": asdict(config),
        "class_names": model.cls_head.class_names,
        "manifest_hash": mani_hash,
        "batch_rng": batch_rng.getstate(),
        "eps_rng": eps_rng.getstate(),
    }
    torch.save(payload, path)


def train_config_from_dict(d: dict) -> TrainConfig:
    """Rebuild a TrainConfig (with nested dataclasses) from its asdict form."""
    d = dict(d)
    circle = CircleTParams(**d.pop("circle"))
    pipe = dict(d.pop("pipeline"))
    toggles = ConditioningToggles(**pipe.pop("toggles"))
    pipeline = PipelineConfig(toggles=toggles, **pipe)
    return TrainConfig(circle=circle, pipeline=pipeline, **d)


def load_checkpoint(path: str | Path) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointCorrupt(f"cannot read checkpoint {path}: {e}") from e
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointCorrupt(f"unsupported checkpoint version in {path}")
    return payload


def fit(manifest: DatasetManifest, split: SplitSpec, config: TrainConfig,
        backbone, clip_encoder, workdir: str | Path,
        resume: str | Path | None = None,
        max_steps: int | None = None) -> Path:
    """Run training and return the final checkpoint path. Resuming from a
    checkpoint continues the loss trace bit-identically on the same device
    profile."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    trace_path = workdir / "trace.log"

    class_names = sorted(split.seen_categories)
    torch.manual_seed(config.seed)
    model = RetrievalModel(backbone, clip_encoder, class_names,
                           config=config.pipeline, seed=config.seed)
    optimizer = make_optimizer(model, config)
    batch_rng = random.Random(config.seed)
    eps_rng = random.Random(config.seed + 1)
    start_step = 0
    mani_hash = manifest_hash(manifest)
    checksum_before = backbone.checksum()

    if resume is not None:
        payload = load_checkpoint(resume)
        if payload["manifest_hash"] != mani_hash:
            raise CheckpointCorrupt("checkpoint manifest hash does not match the manifest")
        model.load_state_dict(payload["model"])
        optimizer.load_state_dict(payload["optimizer"])
        batch_rng.setstate(payload["batch_rng"])
        eps_rng.setstate(payload["eps_rng"])
        start_step = payload["step"]

    n_train = sum(1 for s in manifest.sketches if s.category in split.seen_categories)
    steps_per_epoch = max(1, -(-n_train // config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, start_step + max_steps)

    with open(trace_path, "a", encoding="utf-8") as trace:
        for step in range(start_step, total_steps):
            batch = build_batch(split, manifest, config, batch_rng)
            stats = train_step(batch, model, optimizer, config, eps_rng)
            trace.write(f"{step}\t{stats['loss_ske']:.8f}\t{stats['loss_view']:.8f}"
                        f"\t{stats['loss_cls_view']:.8f}\t{stats['loss_total']:.8f}\n")
            epoch_done = (step + 1) % steps_per_epoch == 0
            if epoch_done and ((step + 1) // steps_per_epoch) % config.checkpoint_every == 0:
                save_checkpoint(workdir / f"ckpt-{step + 1}.bin", model, optimizer,
                                step + 1, config, mani_hash, batch_rng, eps_rng)
                stale = sorted(workdir.glob("ckpt-*.bin"),
                               key=lambda p: int(p.stem.split("-")[1]))
                for old in stale[:-config.keep_checkpoints]:
                    old.unlink()

    if backbone.checksum() != checksum_before:
        warnings.warn("backbone weights changed during training", stacklevel=2)
    final = workdir / f"ckpt-{total_steps}.bin"
    save_checkpoint(final, model, optimizer, total_steps, config, mani_hash,
                    batch_rng, eps_rng)
    return final
