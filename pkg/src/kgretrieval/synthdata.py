"""Synthetic overhead-scene corpus with deliberately lacunary captions.

Each scene draws a few co-occurring objects for its category and renders
them as colored blocks; each of its five captions independently drops
objects, so part of the image content is only recoverable through the
co-occurrence knowledge graph that ships with the corpus.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import SOURCE_RSKG, KnowledgeGraph, Triplet

SENTENCES_PER_IMAGE = 5

# Category -> objects that co-occur in its scenes.
CATEGORY_OBJECTS: dict[str, list[str]] = {
    "harbor": ["boat", "dock", "sea", "ship"],
    "beach": ["sand", "sea", "palm", "umbrella"],
    "lakeside": ["lake", "boat", "tree", "cabin"],
    "airport": ["airplane", "runway", "terminal", "car"],
    "residential": ["building", "road", "car", "garden"],
    "farmland": ["field", "barn", "tractor", "tree"],
    "sports": ["court", "grass", "stand", "track"],
    "mountain": ["mountain", "forest", "river", "bridge"],
}

# Object / background colors as 8-bit RGB so PPM round-trips are exact.
OBJECT_COLORS: dict[str, tuple[int, int, int]] = {
    "boat": (200, 30, 30),
    "dock": (120, 80, 40),
    "sea": (20, 60, 180),
    "ship": (230, 230, 230),
    "sand": (220, 200, 120),
    "palm": (20, 140, 40),
    "umbrella": (240, 60, 160),
    "lake": (40, 100, 200),
    "tree": (30, 110, 30),
    "cabin": (150, 100, 60),
    "airplane": (240, 240, 240),
    "runway": (60, 60, 60),
    "terminal": (180, 180, 200),
    "car": (250, 160, 20),
    "building": (160, 160, 170),
    "road": (80, 80, 90),
    "garden": (90, 180, 70),
    "field": (170, 190, 80),
    "barn": (170, 40, 40),
    "tractor": (230, 120, 20),
    "court": (20, 160, 120),
    "grass": (60, 170, 60),
    "stand": (200, 200, 60),
    "track": (190, 90, 60),
    "mountain": (130, 120, 110),
    "forest": (10, 90, 30),
    "river": (70, 130, 220),
    "bridge": (100, 100, 100),
}

CATEGORY_BACKGROUNDS: dict[str, tuple[int, int, int]] = {
    "harbor": (40, 80, 140),
    "beach": (210, 190, 140),
    "lakeside": (70, 120, 90),
    "airport": (110, 110, 110),
    "residential": (140, 140, 130),
    "farmland": (150, 170, 90),
    "sports": (90, 150, 100),
    "mountain": (100, 100, 90),
}

# Irregular or mass-noun plurals used in captions; everything else takes -s.
PLURAL_FORMS: dict[str, str] = {
    "sea": "sea",
    "sand": "sand",
    "grass": "grass",
    "beach": "beaches",
}


def plural(obj: str) -> str:
    return PLURAL_FORMS.get(obj, obj + "s")


@dataclass
class SceneSpec:
    scene_category: str
    objects: list[str]
    # per object: (grid row, grid col, size in cells, color name)
    layout: list[tuple[int, int, int, str]]
    caption_templates: list[str] = field(default_factory=list)


@dataclass
class ManifestEntry:
    filename: str
    split: str
    sentences: list[str]
    category: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]

    def filenames(self, split: str | None = None) -> list[str]:
        return [e.filename for e in self.entries if split is None or e.split == split]


class MalformedManifest(ValueError):
    pass


def build_mini_kg() -> KnowledgeGraph:
    """One triplet per co-occurring object pair, plus category membership."""
    relations = ("AtLocation", "next_to", "HasA")
    triplets: list[Triplet] = []
    for cat_i, (category, objs) in enumerate(sorted(CATEGORY_OBJECTS.items())):
        for i, a in enumerate(objs):
            for j in range(i + 1, len(objs)):
                rel = relations[(cat_i + i + j) % len(relations)]
                triplets.append(Triplet(a, rel, objs[j], SOURCE_RSKG))
        for obj in objs:
            triplets.append(Triplet(obj, "is_part_of", category, SOURCE_RSKG))
    return KnowledgeGraph(triplets)


def render_image(spec: SceneSpec, size: int = 32) -> np.ndarray:
    """Deterministic (size, size, 3) float image in [0, 1]."""
    grid = 4
    cell = size // grid
    bg = CATEGORY_BACKGROUNDS[spec.scene_category]
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = np.array(bg, dtype=np.float64) / 255.0
    for obj, (row, col, cells, color_name) in zip(spec.objects, spec.layout):
        color = np.array(OBJECT_COLORS[color_name], dtype=np.float64) / 255.0
        r0, c0 = row * cell, col * cell
        extent = cells * cell
        img[r0 : r0 + extent, c0 : c0 + extent] = color
    return img


_TEMPLATES = (
    "there is {a_list} in this {category} area",
    "an overhead view of a {category} scene with {a_list}",
    "{cap_list} can be seen in the {category}",
    "this {category} image shows {a_list}",
    "a {category} area where {a_list} appear",
)


def _article(noun: str) -> str:
    return ("an " if noun[0] in "aeiou" else "a ") + noun


def _mention_phrase(obj: str, rng: random.Random) -> str:
    if obj in PLURAL_FORMS and PLURAL_FORMS[obj] == obj:
        return obj  # mass noun
    if rng.random() < 0.4:
        return rng.choice(("many ", "several ", "some ")) + plural(obj)
    return _article(obj)


def _caption(category: str, mentioned: list[str], rng: random.Random) -> str:
    phrases = [_mention_phrase(obj, rng) for obj in mentioned]
    if len(phrases) == 1:
        joined = phrases[0]
    else:
        joined = ", ".join(phrases[:-1]) + " and " + phrases[-1]
    template = rng.choice(_TEMPLATES)
    return template.format(a_list=joined, cap_list=joined, category=category)


def generate_dataset(
    n_images: int, seed: int, omit_prob: float
) -> tuple[DatasetManifest, dict[str, np.ndarray], KnowledgeGraph]:
    """Deterministic corpus of rendered scenes, captions and the mini graph.

    Every caption keeps at least one scene object so each omitted object
    stays one knowledge-graph hop away from a mentioned one.
    """
    if n_images < 10:
        raise ValueError("need at least 10 images")
    if not 0.0 <= omit_prob <= 1.0:
        raise ValueError("omit_prob must be in [0, 1]")
    rng = random.Random(seed)
    categories = sorted(CATEGORY_OBJECTS)
    entries: list[ManifestEntry] = []
    images: dict[str, np.ndarray] = {}

    cells = [(r, c) for r in range(4) for c in range(4)]
    for i in range(n_images):
        category = categories[i % len(categories)]
        pool = CATEGORY_OBJECTS[category]
        k = rng.randint(2, min(4, len(pool)))
        objects = rng.sample(pool, k)
        spots = rng.sample(cells, k)
        layout = [(r, c, 1, obj) for (r, c), obj in zip(spots, objects)]
        spec = SceneSpec(category, objects, layout)

        sentences = []
        for _ in range(SENTENCES_PER_IMAGE):
            mentioned = [obj for obj in objects if rng.random() >= omit_prob]
            if not mentioned:
                mentioned = [rng.choice(objects)]
            sentences.append(_caption(category, mentioned, rng))

        filename = f"scene_{i:05d}.ppm"
        images[filename] = render_image(spec)
        entries.append(ManifestEntry(filename, "train", sentences, category))

    order = list(range(n_images))
    rng.shuffle(order)
    n_test = max(n_images // 10, 1)
    n_val = max(n_images // 10, 1)
    for pos, idx in enumerate(order):
        if pos < n_test:
            entries[idx].split = "test"
        elif pos < n_test + n_val:
            entries[idx].split = "val"
    return DatasetManifest(entries), images, build_mini_kg()


# -- on-disk format -------------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, 8 bits per channel."""
    h, w, _ = image.shape
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            while blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise ValueError("only maxval 255 supported")
    pixels = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def write_dataset(manifest: DatasetManifest, images: dict[str, np.ndarray], directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        write_ppm(directory / entry.filename, images[entry.filename])
    payload = {
        "images": [
            {
                "filename": e.filename,
                "split": e.split,
                "sentences": e.sentences,
                "category": e.category,
            }
            for e in manifest.entries
        ]
    }
    (directory / "manifest.json").write_text(json.dumps(payload, indent=1), encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedManifest(str(exc)) from exc
    if not isinstance(payload, dict) or "images" not in payload:
        raise MalformedManifest("missing top-level 'images' list")
    entries = []
    for rec in payload["images"]:
        sentences = rec.get("sentences", [])
        if len(sentences) != SENTENCES_PER_IMAGE:
            raise MalformedManifest(
                f"{rec.get('filename')}: expected {SENTENCES_PER_IMAGE} sentences, got {len(sentences)}"
            )
        if rec.get("split") not in ("train", "val", "test"):
            raise MalformedManifest(f"{rec.get('filename')}: bad split {rec.get('split')!r}")
        entries.append(
            ManifestEntry(rec["filename"], rec["split"], list(sentences), rec.get("category", ""))
        )
    return DatasetManifest(entries)


def read_dataset(directory) -> tuple[DatasetManifest, dict[str, np.ndarray]]:
    directory = Path(directory)
    manifest = read_manifest(directory / "manifest.json")
    images = {e.filename: read_ppm(directory / e.filename) for e in manifest.entries}
    return manifest, images
