"""Shared fixtures: procedural meshes, sketches, and a small rendered
corpus that exercises the full pipeline without any model assets."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image, ImageFilter, ImageOps

from diffsbsr import manifest as mani
from diffsbsr.backbone import MockBackbone
from diffsbsr.encoders import MockClipEncoder
from diffsbsr.rendering import CameraRig, load_mesh, normalize_mesh, render_view

CATEGORIES = ["arch", "bottle", "crate", "dome", "spike", "tower"]


def write_obj(path, verts, faces):
    lines = [f"v {x} {y} {z}" for x, y, z in verts]
    lines += ["f " + " ".join(str(i + 1) for i in f) for f in faces]
    path.write_text("\n".join(lines) + "\n")


def cube_mesh(sx=1.0, sy=1.0, sz=1.0):
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)],
                 dtype=float)
    f = [[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
         [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]]
    return v, f


def bipyramid_mesh(n_sides, height=1.2, radius=0.8):
    angles = np.linspace(0, 2 * np.pi, n_sides, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles),
                     np.zeros(n_sides)], axis=1)
    verts = np.vstack([ring, [[0, 0, height], [0, 0, -height]]])
    faces = []
    top, bot = n_sides, n_sides + 1
    for i in range(n_sides):
        j = (i + 1) % n_sides
        faces.append([i, j, top])
        faces.append([j, i, bot])
    return verts, faces


def category_mesh(cat_index: int, instance: int):
    """Visually distinct geometry per category, mild per-instance jitter."""
    rng = np.random.default_rng(1000 * cat_index + instance)
    builders = [
        lambda: cube_mesh(1.0, 1.0, 0.3),       # arch: flat slab
        lambda: bipyramid_mesh(8, 1.6, 0.45),   # bottle: tall octagonal spindle
        lambda: cube_mesh(0.9, 0.9, 0.9),       # crate: cube
        lambda: bipyramid_mesh(12, 0.5, 1.0),   # dome: squat disc
        lambda: bipyramid_mesh(3, 1.8, 0.35),   # spike: thin tri-spindle
        lambda: cube_mesh(0.3, 0.3, 1.6),       # tower: tall box
    ]
    verts, faces = builders[cat_index]()
    verts = verts * (1.0 + 0.05 * rng.standard_normal(verts.shape))
    return verts, faces


def make_sketch(mesh_path, azimuth: float, size: int = 64) -> Image.Image:
    """Edge-filtered render: black strokes on white, the sketch stand-in."""
    verts, faces = load_mesh(mesh_path)
    verts = normalize_mesh(verts)
    rig = CameraRig(view_count=1, azimuths_deg=(azimuth % 360.0,),
                    elevation_deg=10.0, image_size=size)
    img = render_view(verts, np.asarray(faces), rig, azimuth % 360.0).convert("L")
    edges = img.filter(ImageFilter.FIND_EDGES)
    strokes = ImageOps.invert(edges.point(lambda p: 255 if p > 24 else 0))
    return Image.merge("RGB", (strokes, strokes, strokes))


def build_corpus(root, n_shapes=3, n_sketches=4, view_count=4, image_size=64):
    """Category-organized corpus under root/synth/ with rendered views."""
    base = root / "synth"
    for ci, cat in enumerate(CATEGORIES):
        shape_dir = base / "shapes" / cat
        sketch_dir = base / "sketches" / cat
        shape_dir.mkdir(parents=True)
        sketch_dir.mkdir(parents=True)
        for i in range(n_shapes):
            verts, faces = category_mesh(ci, i)
            write_obj(shape_dir / f"shape{i}.obj", verts, faces)
        for i in range(n_sketches):
            # sketches come from the category's base geometry at odd angles
            verts, faces = category_mesh(ci, 100 + i)
            mesh_path = sketch_dir / f"_tmp{i}.obj"
            write_obj(mesh_path, verts, faces)
            sketch = make_sketch(mesh_path, azimuth=15.0 + 37.0 * i, size=image_size)
            sketch.save(sketch_dir / f"sketch{i}.png")
            mesh_path.unlink()

    m = mani.load_manifest(root, "synth")
    # render candidate views and record them in the manifest
    rig = CameraRig(view_count=view_count, elevation_deg=20.0, image_size=image_size)
    shapes = []
    render_root = root / "renders"
    for rec in m.shapes:
        out = render_root / rec.shape_id
        out.mkdir(parents=True, exist_ok=True)
        verts, faces = load_mesh(rec.mesh_uri)
        verts = normalize_mesh(verts)
        uris = []
        for vi, az in enumerate(rig.azimuths_deg):
            p = out / f"view{vi:02d}.png"
            render_view(verts, np.asarray(faces), rig, az).save(p)
            uris.append(str(p))
        shapes.append(mani.ShapeRecord(rec.shape_id, rec.category, rec.mesh_uri, tuple(uris)))
    from dataclasses import replace
    return replace(m, shapes=tuple(shapes))


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root)


@pytest.fixture(scope="session")
def backbone():
    return MockBackbone()


@pytest.fixture(scope="session")
def clip_encoder():
    return MockClipEncoder()


@pytest.fixture(scope="session")
def zero_shot_split():
    """4 seen / 2 unseen synthetic categories."""
    return mani.SplitSpec(protocol="SplitII",
                          seen_categories=frozenset(CATEGORIES[:4]),
                          unseen_categories=frozenset(CATEGORIES[4:]))
