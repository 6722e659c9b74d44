"""Command-line entry points for the retrieval pipeline."""

from __future__ import annotations

import random
from pathlib import Path

import click
import numpy as np

from . import manifest as mani
from .encoders import MockClipEncoder, centrality_anchor, embed_views, select_top_k, text_anchor
from .rendering import CameraRig, render_views


@click.group()
def main():
    """Zero-shot sketch-based 3D shape retrieval toolkit."""


@main.command()
@click.option("--root", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=click.Choice(["shrec13", "shrec14"]), required=True)
@click.option("--out", type=click.Path(), default="manifest.tsv", show_default=True)
def ingest(root, dataset, out):
    """Scan a corpus directory into a manifest file."""
    m = mani.load_manifest(root, dataset)
    mani.save_manifest(m, out)
    click.echo(f"wrote {out}: {len(m.sketches)} sketches, {len(m.shapes)} shapes, "
               f"{len(m.categories)} categories")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--views", default=12, show_default=True)
@click.option("--elev", default=20.0, show_default=True)
@click.option("--size", default=224, show_default=True)
@click.option("--out-dir", type=click.Path(), default="renders", show_default=True)
def render(manifest_path, views, elev, size, out_dir):
    """Render candidate views for every shape in the manifest."""
    m = mani.read_manifest(manifest_path)
    out_dir = Path(out_dir)
    rig = CameraRig(view_count=views, elevation_deg=elev, image_size=size)
    shapes = []
    for rec in m.shapes:
        shape_dir = out_dir / rec.shape_id
        shape_dir.mkdir(parents=True, exist_ok=True)
        uris = []
        for i, img in enumerate(render_views(rec.mesh_uri, rig)):
            p = shape_dir / f"view{i:02d}.png"
            img.save(p)
            uris.append(str(p))
        shapes.append(mani.ShapeRecord(rec.shape_id, rec.category, rec.mesh_uri, tuple(uris)))
    from dataclasses import replace
    mani.save_manifest(replace(m, shapes=tuple(shapes)), manifest_path)
    click.echo(f"rendered {len(shapes)} shapes x {views} views")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--protocol", type=click.Choice(["split1", "split2"]), required=True)
def split(manifest_path, protocol):
    """Partition categories and assign sketch roles for zero-shot eval."""
    m = mani.read_manifest(manifest_path)
    spec = mani.make_split(m, protocol)
    mani.save_manifest(mani.apply_split_roles(m, spec), manifest_path)
    click.echo(f"{spec.protocol}: {len(spec.seen_categories)} seen / "
               f"{len(spec.unseen_categories)} unseen")


@main.command("select-views")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--k", default=3, show_default=True)
@click.option("--fallback", type=click.Choice(["centrality"]), default="centrality")
def select_views(manifest_path, k, fallback):
    """Keep the top-k views per shape by vision-language similarity to the
    gallery category anchor; selection is written back to the manifest."""
    from PIL import Image

    m = mani.read_manifest(manifest_path)
    enc = MockClipEncoder()
    shapes = []
    for rec in m.shapes:
        if not rec.view_uris:
            shapes.append(rec)
            continue
        images = [Image.open(u) for u in rec.view_uris]
        embs = embed_views(images, enc, shape_id=rec.shape_id)
        if rec.category:
            anchor = text_anchor(rec.category, enc)
        else:
            anchor = centrality_anchor(embs)
        sel = select_top_k(embs, anchor, k=k)
        uris = tuple(rec.view_uris[i] for i in sel.selected_indices)
        shapes.append(mani.ShapeRecord(rec.shape_id, rec.category, rec.mesh_uri, uris))
    from dataclasses import replace
    mani.save_manifest(replace(m, shapes=tuple(shapes)), manifest_path)
    click.echo(f"selected top-{k} views for {len(shapes)} shapes")


@main.command()
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--protocol", type=click.Choice(["split1", "split2"]), default="split2")
@click.option("--workdir", type=click.Path(), default="runs/default", show_default=True)
@click.option("--mock-backbone", is_flag=True, default=True)
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.option("--epochs", default=None, type=int, help="override config epochs")
@click.option("--max-steps", default=None, type=int)
@click.option("--seed", default=0, show_default=True)
def train(manifest_path, protocol, workdir, mock_backbone, resume, epochs, max_steps, seed):
    """Train the adapter stack with the backbone frozen."""
    from .backbone import MockBackbone
    from .training import TrainConfig, fit

    m = mani.read_manifest(manifest_path)
    spec = mani.make_split(m, protocol)
    config = TrainConfig(seed=seed)
    if epochs is not None:
        config.epochs = epochs
    ckpt = fit(m, spec, config, MockBackbone(), MockClipEncoder(), workdir,
               resume=resume, max_steps=max_steps)
    click.echo(f"final checkpoint: {ckpt}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--protocol", type=click.Choice(["split1", "split2"]), default="split2")
@click.option("--report-dir", "report_dir", type=click.Path(), default="out", show_default=True)
@click.option("--heatmap/--no-heatmap", default=True)
def evaluate(ckpt, manifest_path, protocol, report_dir, heatmap):
    """Zero-shot evaluation: unseen sketches against the unseen gallery."""
    from .backbone import MockBackbone
    from .evaluation import confusion_heatmap, evaluate as run_eval, save_report
    from .pipeline import RetrievalModel
    from .training import load_checkpoint, train_config_from_dict

    m = mani.read_manifest(manifest_path)
    spec = mani.make_split(m, protocol)
    m = mani.apply_split_roles(m, spec)
    payload = load_checkpoint(ckpt)
    cfg = train_config_from_dict(payload["config"])
    model = RetrievalModel(MockBackbone(), MockClipEncoder(), payload["class_names"],
                           config=cfg.pipeline)
    model.load_state_dict(payload["model"])
    model.eval()

    report, ranked, index = run_eval(model, m, spec)
    out = Path(report_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / "report.json")
    index.save(out / "index.bin")
    if heatmap:
        labels = dict(zip(index.ids, index.labels))
        qlabels = [r.query_id.split("/")[0] for r in ranked]
        confusion_heatmap(ranked, qlabels, labels, out / "confusion.png")
    click.echo(f"mAP={report.mAP:.4f} NN={report.NN:.4f} ({report.query_count} queries), "
               f"report in {out}")


@main.command()
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--index", "index_path", type=click.Path(), default="index.bin", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(ckpt, manifest_path, index_path, host, port):
    """Serve interactive retrieval over HTTP."""
    from .service import ServiceConfig, serve as run_serve
    run_serve(ServiceConfig(checkpoint_path=ckpt, index_path=index_path,
                            manifest_path=manifest_path, host=host, port=port))


if __name__ == "__main__":
    main()
