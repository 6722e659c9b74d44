"""Dataset manifests, zero-shot category splits, and on-disk persistence.

On-disk corpus layout:
    <root>/<dataset>/sketches/<category>/<id>.png
    <root>/<dataset>/shapes/<category>/<id>.(obj|off)

The manifest itself is a line-delimited text file, one record per line:
    kind TAB id TAB category TAB uri TAB role TAB caption TAB view_uris
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import CountMismatch, DuplicateId, EmptyCategory, MissingDirectory

SKETCH_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}
MESH_EXTS = {".obj", ".off"}

# Published cardinalities for the official corpora (category count,
# shape count, sketch count, split-I seen count, split-II unseen count).
OFFICIAL = {
    "shrec13": {"categories": 90, "shapes": 1258, "sketches": 7200,
                "split1_seen": 79, "split2_unseen": 23},
    "shrec14": {"categories": 171, "shapes": 8987, "sketches": 13680,
                "split1_seen": 151, "split2_unseen": 38},
}

SPLIT2_SHAPE_THRESHOLD = 5  # categories with <= this many shapes are unseen


@dataclass(frozen=True)
class ShapeRecord:
    shape_id: str
    category: str
    mesh_uri: str
    view_uris: tuple[str, ...] = ()


@dataclass(frozen=True)
class SketchRecord:
    sketch_id: str
    category: str
    image_uri: str
    role: str = "train"  # train | test
    caption: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    dataset_name: str
    shapes: tuple[ShapeRecord, ...]
    sketches: tuple[SketchRecord, ...]
    categories: tuple[str, ...]

    def __post_init__(self):
        cats = set(self.categories)
        for r in self.shapes:
            if r.category not in cats:
                raise ValueError(f"shape {r.shape_id} has unknown category {r.category!r}")
        for r in self.sketches:
            if r.category not in cats:
                raise ValueError(f"sketch {r.sketch_id} has unknown category {r.category!r}")

    def shapes_by_category(self) -> dict[str, list[ShapeRecord]]:
        out: dict[str, list[ShapeRecord]] = {c: [] for c in self.categories}
        for r in self.shapes:
            out[r.category].append(r)
        return out

    def sketches_by_category(self) -> dict[str, list[SketchRecord]]:
        out: dict[str, list[SketchRecord]] = {c: [] for c in self.categories}
        for r in self.sketches:
            out[r.category].append(r)
        return out


@dataclass(frozen=True)
class SplitSpec:
    protocol: str  # SplitI | SplitII
    seen_categories: frozenset[str]
    unseen_categories: frozenset[str]

    def __post_init__(self):
        if self.seen_categories & self.unseen_categories:
            raise ValueError("seen and unseen categories overlap")


def load_manifest(root: str | Path, dataset_name: str) -> DatasetManifest:
    """Scan a category-organized corpus directory into a manifest.

    Ids are prefixed with the category name so identical file stems in
    different categories never collide. Categories are sorted
    lexicographically.
    """
    root = Path(root)
    base = root / dataset_name
    sketch_dir = base / "sketches"
    shape_dir = base / "shapes"
    if not sketch_dir.is_dir() and not shape_dir.is_dir():
        raise MissingDirectory(f"no sketches/ or shapes/ under {base}")

    categories = set()
    sketches: list[SketchRecord] = []
    shapes: list[ShapeRecord] = []

    if sketch_dir.is_dir():
        for cat_dir in sorted(p for p in sketch_dir.iterdir() if p.is_dir()):
            files = sorted(p for p in cat_dir.iterdir() if p.suffix.lower() in SKETCH_EXTS)
            if not files:
                raise EmptyCategory(f"sketch category {cat_dir.name!r} is empty")
            categories.add(cat_dir.name)
            for f in files:
                sketches.append(SketchRecord(
                    sketch_id=f"{cat_dir.name}/{f.stem}",
                    category=cat_dir.name,
                    image_uri=str(f),
                ))
    if shape_dir.is_dir():
        for cat_dir in sorted(p for p in shape_dir.iterdir() if p.is_dir()):
            files = sorted(p for p in cat_dir.iterdir() if p.suffix.lower() in MESH_EXTS)
            if not files:
                raise EmptyCategory(f"shape category {cat_dir.name!r} is empty")
            categories.add(cat_dir.name)
            for f in files:
                shapes.append(ShapeRecord(
                    shape_id=f"{cat_dir.name}/{f.stem}",
                    category=cat_dir.name,
                    mesh_uri=str(f),
                ))

    if not categories:
        raise MissingDirectory(f"no category folders under {base}")

    _check_unique([r.sketch_id for r in sketches], "sketch")
    _check_unique([r.shape_id for r in shapes], "shape")

    return DatasetManifest(
        dataset_name=dataset_name,
        shapes=tuple(shapes),
        sketches=tuple(sketches),
        categories=tuple(sorted(categories)),
    )


def _check_unique(ids: list[str], kind: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateId(f"duplicate {kind} id {i!r}")
        seen.add(i)


def make_split(manifest: DatasetManifest, protocol: str) -> SplitSpec:
    """Partition manifest categories into seen/unseen per the protocol.

    SplitI: the alphabetically-first block of categories is seen.
    SplitII: categories with SPLIT2_SHAPE_THRESHOLD or fewer gallery
    shapes are unseen.
    """
    protocol = _norm_protocol(protocol)
    cats = sorted(manifest.categories)
    official = OFFICIAL.get(manifest.dataset_name.lower())
    is_official = (
        official is not None
        and len(cats) == official["categories"]
        and len(manifest.shapes) == official["shapes"]
        and len(manifest.sketches) == official["sketches"]
    )

    if protocol == "SplitI":
        if official is not None and len(cats) == official["categories"]:
            n_seen = official["split1_seen"]
        else:
            # partial fixture: keep the official seen fraction
            frac = 79 / 90 if official is None else official["split1_seen"] / official["categories"]
            n_seen = max(1, min(len(cats) - 1, round(len(cats) * frac))) if len(cats) > 1 else len(cats)
        seen = frozenset(cats[:n_seen])
        unseen = frozenset(cats[n_seen:])
    else:
        by_cat = manifest.shapes_by_category()
        unseen = frozenset(c for c in cats if len(by_cat[c]) <= SPLIT2_SHAPE_THRESHOLD)
        seen = frozenset(cats) - unseen
        if is_official:
            expected = official["split2_unseen"]
            if len(unseen) != expected:
                raise CountMismatch(
                    f"SplitII on official {manifest.dataset_name}: got "
                    f"{len(unseen)} unseen categories, expected {expected}")
        elif official is not None and len(cats) == official["categories"]:
            if len(unseen) != official["split2_unseen"]:
                warnings.warn("SplitII partition size differs from the published count "
                              "(partial fixture?)", stacklevel=2)

    return SplitSpec(protocol=protocol, seen_categories=seen, unseen_categories=unseen)


def _norm_protocol(protocol: str) -> str:
    p = protocol.lower().replace("-", "").replace("_", "")
    if p in ("spliti", "split1"):
        return "SplitI"
    if p in ("splitii", "split2"):
        return "SplitII"
    raise ValueError(f"unknown split protocol {protocol!r}")


def apply_split_roles(manifest: DatasetManifest, split: SplitSpec) -> DatasetManifest:
    """Assign role=test to every sketch of an unseen category."""
    sketches = tuple(
        replace(s, role="test" if s.category in split.unseen_categories else "train")
        for s in manifest.sketches
    )
    return replace(manifest, sketches=sketches)


# ---------------------------------------------------------------------------
# persistence

_HEADER = "#diffsbsr-manifest v1"


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    lines = [_HEADER, f"#dataset\t{manifest.dataset_name}",
             "#categories\t" + ",".join(manifest.categories)]
    for s in manifest.sketches:
        lines.append("\t".join(["sketch", s.sketch_id, s.category, s.image_uri,
                                s.role, s.caption, ""]))
    for r in manifest.shapes:
        lines.append("\t".join(["shape", r.shape_id, r.category, r.mesh_uri,
                                "", "", ";".join(r.view_uris)]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise MissingDirectory(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _HEADER:
        raise CountMismatch(f"not a manifest file: {path}")
    dataset_name = ""
    categories: tuple[str, ...] = ()
    sketches: list[SketchRecord] = []
    shapes: list[ShapeRecord] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        if line.startswith("#dataset\t"):
            dataset_name = line.split("\t", 1)[1]
            continue
        if line.startswith("#categories\t"):
            categories = tuple(line.split("\t", 1)[1].split(","))
            continue
        kind, rid, cat, uri, role, caption, views = line.split("\t")
        if kind == "sketch":
            sketches.append(SketchRecord(rid, cat, uri, role or "train", caption))
        elif kind == "shape":
            view_uris = tuple(v for v in views.split(";") if v)
            shapes.append(ShapeRecord(rid, cat, uri, view_uris))
        else:
            raise CountMismatch(f"unknown record kind {kind!r}")
    return DatasetManifest(dataset_name, tuple(shapes), tuple(sketches), categories)
