"""Fixed-viewpoint mesh rendering with a small software rasterizer.

Meshes are normalized to the unit bounding sphere centered at the origin,
then rasterized with a z-buffer. Rendering is pure in (mesh, rig): the same
inputs always produce byte-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DegenerateMesh, MeshLoadFailure


@dataclass(frozen=True)
class CameraRig:
    view_count: int = 12
    elevation_deg: float = 20.0
    azimuths_deg: tuple[float, ...] = ()
    image_size: int = 224
    projection: str = "perspective"  # perspective | orthographic

    def __post_init__(self):
        if not self.azimuths_deg:
            step = 360.0 / self.view_count
            object.__setattr__(self, "azimuths_deg",
                               tuple(i * step for i in range(self.view_count)))
        if len(self.azimuths_deg) != self.view_count:
            raise ValueError("azimuth count must equal view_count")
        az = self.azimuths_deg
        if any(not (0 <= a < 360) for a in az) or any(az[i] >= az[i + 1] for i in range(len(az) - 1)):
            raise ValueError("azimuths must be strictly increasing in [0, 360)")
        if self.projection not in ("perspective", "orthographic"):
            raise ValueError(f"unknown projection {self.projection!r}")


def load_mesh(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Load an .obj or .off mesh; returns (vertices Nx3, faces Mx3 int)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        raise MeshLoadFailure(f"cannot read mesh {path}: {e}") from e
    suffix = path.suffix.lower()
    try:
        if suffix == ".obj":
            verts, faces = _parse_obj(text)
        elif suffix == ".off":
            verts, faces = _parse_off(text)
        else:
            raise MeshLoadFailure(f"unsupported mesh format {suffix!r}")
    except (ValueError, IndexError) as e:
        raise MeshLoadFailure(f"malformed mesh {path}: {e}") from e
    if len(verts) == 0 or len(faces) == 0:
        raise MeshLoadFailure(f"mesh {path} has no geometry")
    return verts, faces


def _parse_obj(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for i in range(1, len(idx) - 1):  # fan-triangulate
                faces.append([idx[0], idx[i], idx[i + 1]])
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def _parse_off(text: str) -> tuple[np.ndarray, np.ndarray]:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if tokens[0] != "OFF":
        raise ValueError("missing OFF header")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.asarray([float(t) for t in tokens[pos:pos + 3 * nv]],
                       dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for _ in range(nf):
        k = int(tokens[pos])
        idx = [int(t) for t in tokens[pos + 1:pos + 1 + k]]
        pos += 1 + k
        for i in range(1, k - 1):
            faces.append([idx[0], idx[i], idx[i + 1]])
    return verts, np.asarray(faces, dtype=np.int64)


def normalize_mesh(verts: np.ndarray) -> np.ndarray:
    """Translate centroid to origin and scale to the unit bounding sphere."""
    centered = verts - verts.mean(axis=0)
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius <= 0:
        raise DegenerateMesh("mesh has zero spatial extent")
    return centered / radius


def _camera_axes(azimuth_deg: float, elevation_deg: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    # camera sits on the sphere looking at the origin
    eye_dir = np.array([math.cos(el) * math.cos(az),
                        math.cos(el) * math.sin(az),
                        math.sin(el)])
    forward = -eye_dir
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, world_up)
    if np.linalg.norm(right) < 1e-9:
        right = np.array([0.0, 1.0, 0.0])
    right = right / np.linalg.norm(right)
    up = np.cross(right, forward)
    return eye_dir, right, up


def render_view(verts: np.ndarray, faces: np.ndarray, rig: CameraRig,
                azimuth_deg: float) -> Image.Image:
    """Rasterize one view: white background, shaded dark silhouette."""
    size = rig.image_size
    eye_dir, right, up = _camera_axes(azimuth_deg, rig.elevation_deg)

    if rig.projection == "orthographic":
        # view volume [-1, 1]^2 exactly covers the unit sphere
        cam_dist = 3.0
        eye = eye_dir * cam_dist
        rel = verts - eye
        x_cam = rel @ right
        y_cam = rel @ up
        z_cam = rel @ (-eye_dir)  # depth along viewing direction
        sx = x_cam
        sy = y_cam
    else:
        cam_dist = 2.5
        eye = eye_dir * cam_dist
        rel = verts - eye
        x_cam = rel @ right
        y_cam = rel @ up
        z_cam = rel @ (-eye_dir)
        # focal length chosen so the unit sphere fills most of the frame
        focal = 1.9
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = focal * x_cam / z_cam
            sy = focal * y_cam / z_cam

    # NDC [-1,1] -> pixel coordinates (y down)
    px = (sx + 1.0) * 0.5 * size - 0.5
    py = (1.0 - (sy + 1.0) * 0.5) * size - 0.5

    canvas = np.full((size, size), 255.0)
    zbuf = np.full((size, size), np.inf)

    light = np.array([0.4, 0.3, 0.85])
    light = light / np.linalg.norm(light)

    tri_px = px[faces]  # (M, 3)
    tri_py = py[faces]
    tri_z = z_cam[faces]
    v0 = verts[faces[:, 0]]
    v1 = verts[faces[:, 1]]
    v2 = verts[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    norm_len = np.linalg.norm(normals, axis=1)

    for m in range(len(faces)):
        if norm_len[m] <= 1e-12:
            continue
        xs, ys, zs = tri_px[m], tri_py[m], tri_z[m]
        if np.any(zs <= 1e-6):
            continue
        x_min = max(int(math.floor(xs.min())), 0)
        x_max = min(int(math.ceil(xs.max())), size - 1)
        y_min = max(int(math.floor(ys.min())), 0)
        y_max = min(int(math.ceil(ys.max())), size - 1)
        if x_min > x_max or y_min > y_max:
            continue
        gx, gy = np.meshgrid(np.arange(x_min, x_max + 1, dtype=np.float64),
                             np.arange(y_min, y_max + 1, dtype=np.float64))
        d = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(d) < 1e-12:
            continue
        w1 = ((gx - xs[0]) * (ys[2] - ys[0]) - (gy - ys[0]) * (xs[2] - xs[0])) / d
        w2 = ((gy - ys[0]) * (xs[1] - xs[0]) - (gx - xs[0]) * (ys[1] - ys[0])) / d
        w0 = 1.0 - w1 - w2
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        zi = w0 * zs[0] + w1 * zs[1] + w2 * zs[2]
        n = normals[m] / norm_len[m]
        shade = 40.0 + 140.0 * abs(float(n @ light))
        sub_z = zbuf[y_min:y_max + 1, x_min:x_max + 1]
        sub_c = canvas[y_min:y_max + 1, x_min:x_max + 1]
        win = inside & (zi < sub_z)
        sub_z[win] = zi[win]
        sub_c[win] = shade

    arr = np.clip(canvas, 0, 255).astype(np.uint8)
    return Image.fromarray(np.stack([arr] * 3, axis=-1), mode="RGB")


def render_views(mesh_path: str | Path, rig: CameraRig) -> list[Image.Image]:
    """Render all rig viewpoints of a normalized mesh, deterministically."""
    verts, faces = load_mesh(mesh_path)
    verts = normalize_mesh(verts)
    return [render_view(verts, faces, rig, az) for az in rig.azimuths_deg]


def rasterize_sketch(image: Image.Image, size: int) -> Image.Image:
    """Pin the sketch preprocessing contract: white background, black
    strokes, 3 channels, square resize."""
    if image.mode in ("RGBA", "LA", "P"):
        rgba = image.convert("RGBA")
        bg = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
        image = Image.alpha_composite(bg, rgba).convert("L")
    else:
        image = image.convert("L")
    image = image.resize((size, size), Image.BILINEAR)
    return Image.merge("RGB", (image, image, image))
