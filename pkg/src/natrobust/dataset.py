"""Anchor/neighbour frame manifests, video-level splits and a synthetic video source.

A manifest row is one anchor frame (one per shot) with up to ten temporal
neighbours at 15 Hz, offsets -5..-1 and +1..+5. Neighbours inherit the
anchor's label.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from natrobust.errors import (
    BadFractions,
    InvalidOffset,
    MissingFile,
    ParseError,
    SchemaViolation,
)
from natrobust.image import EvalGeometry, Image, crop, quantize, read_image, write_png
from natrobust.rng import keyed_stream, keyed_uniform

FRAME_RATE_HZ = 15
OFFSETS = (-5, -4, -3, -2, -1, 1, 2, 3, 4, 5)
SPLITS = ("train", "val", "test")
BASE_COLUMNS = ("video_id", "shot_id", "split", "label", "anchor_path")
NEIGHBOR_COLUMNS = tuple(f"n{k:+d}" for k in OFFSETS)
MANIFEST_COLUMNS = BASE_COLUMNS + NEIGHBOR_COLUMNS
_NEIGHBOR_RE = re.compile(r"^n([+-]?\d+)$")


def offset_ms(k: int) -> float:
    return k * 1000.0 / FRAME_RATE_HZ


def check_offset(k) -> int:
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or int(k) not in OFFSETS:
        raise InvalidOffset(f"offset index must be in -5..-1 or 1..5, got {k!r}")
    return int(k)


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    shot_id: str
    split: str
    label: int
    anchor_path: str
    neighbors: dict = field(default_factory=dict)  # offset index -> relative path


@dataclass(frozen=True)
class FrameManifest:
    entries: tuple
    num_classes: int
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def subset(self, split: str) -> "FrameManifest":
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return replace(self, entries=tuple(e for e in self.entries if e.split == split))

    def by_shot(self) -> dict:
        return {e.shot_id: e for e in self.entries}

    def path(self, rel: str) -> Path:
        return self.root / rel

    def anchor_path(self, entry: ManifestEntry) -> Path:
        return self.root / entry.anchor_path

    def frame_path(self, entry: ManifestEntry, offset: int) -> Path:
        if offset == 0:
            return self.anchor_path(entry)
        return self.root / entry.neighbors[offset]


@dataclass(frozen=True)
class FramePair:
    video_id: str
    shot_id: str
    offset: int
    anchor_path: Path
    other_path: Path
    delta_ms: float
    label: int


def _parse_header(header) -> dict:
    if header is None:
        raise ParseError("empty manifest")
    header = [h.strip() for h in header]
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"manifest missing columns {missing}")
    neighbor_cols = {}
    for col in header:
        if col in BASE_COLUMNS:
            continue
        m = _NEIGHBOR_RE.match(col)
        if not m:
            raise ParseError(f"unexpected manifest column {col!r}")
        k = int(m.group(1))
        if k == 0:
            raise ParseError("offset index 0 is the anchor itself, not a neighbour")
        if k not in OFFSETS:
            raise ParseError(f"neighbour offset {k} outside -5..5")
        neighbor_cols[col] = k
    if len(set(header)) != len(header):
        raise ParseError("duplicate manifest columns")
    return neighbor_cols


def load_manifest(path, num_classes: int | None = None, check_files: bool = False) -> FrameManifest:
    """Read and validate a manifest CSV.

    ``num_classes`` falls back to the ``<name>.meta.json`` sidecar, then to
    ``max(label) + 1``.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest {path} not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        neighbor_cols = _parse_header(header)
        names = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise ParseError(f"line {lineno}: expected {len(names)} fields, got {len(row)}")
            rows.append((lineno, dict(zip(names, (c.strip() for c in row)))))

    if num_classes is None:
        meta = manifest_meta_path(path)
        if meta.is_file():
            num_classes = int(json.loads(meta.read_text())["num_classes"])

    entries = []
    seen_shots = {}
    video_split = {}
    for lineno, rec in rows:
        try:
            label = int(rec["label"])
        except ValueError:
            raise ParseError(f"line {lineno}: label {rec['label']!r} is not an integer") from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise ParseError(f"line {lineno}: label {label} outside [0, {num_classes})")
        split = rec["split"]
        if split not in SPLITS:
            raise ParseError(f"line {lineno}: split {split!r} not in {SPLITS}")
        if not rec["video_id"] or not rec["shot_id"] or not rec["anchor_path"]:
            raise ParseError(f"line {lineno}: empty video_id/shot_id/anchor_path")
        shot = rec["shot_id"]
        if shot in seen_shots:
            raise SchemaViolation(
                f"line {lineno}: shot {shot!r} already has an anchor (line {seen_shots[shot]})"
            )
        seen_shots[shot] = lineno
        vid = rec["video_id"]
        if video_split.setdefault(vid, split) != split:
            raise SchemaViolation(
                f"line {lineno}: video {vid!r} appears in both {video_split[vid]} and {split}"
            )
        neighbors = {k: rec[col] for col, k in neighbor_cols.items() if rec[col]}
        entries.append(ManifestEntry(vid, shot, split, label, rec["anchor_path"], neighbors))

    if num_classes is None:
        num_classes = max((e.label for e in entries), default=-1) + 1
    manifest = FrameManifest(tuple(entries), num_classes, path.parent)
    if check_files:
        for e in entries:
            for rel in (e.anchor_path, *e.neighbors.values()):
                if not (manifest.root / rel).is_file():
                    raise MissingFile(f"frame {rel} referenced by shot {e.shot_id} not found")
    return manifest


def manifest_meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def save_manifest(manifest: FrameManifest, path, meta: dict | None = None) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            w.writerow([e.video_id, e.shot_id, e.split, e.label, e.anchor_path,
                        *(e.neighbors.get(k, "") for k in OFFSETS)])
    info = {"num_classes": manifest.num_classes}
    info.update(meta or {})
    manifest_meta_path(path).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def pairs_at_offset(manifest: FrameManifest, k: int) -> list[FramePair]:
    """One (anchor, neighbour k) pair per anchor that has that neighbour."""
    k = check_offset(k)
    return [
        FramePair(e.video_id, e.shot_id, k, manifest.anchor_path(e),
                  manifest.root / e.neighbors[k], offset_ms(k), e.label)
        for e in manifest.entries
        if k in e.neighbors
    ]


def split_by_video(video_ids, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict:
    """Assign each video id to train/val/test.

    The assignment for an id depends only on ``(seed, id)``, so it is stable
    under reordering and every shot of a video lands in the same split.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractions(f"need three non-negative fractions summing to 1, got {fractions}")
    cuts = np.cumsum(fractions)
    # the last split with positive mass absorbs round-off at the top end
    last = max(i for i, f in enumerate(fractions) if f > 0)
    out = {}
    for vid in video_ids:
        u = keyed_uniform(int(seed), "split", str(vid))
        idx = next((i for i, c in enumerate(cuts) if u < c and fractions[i] > 0), last)
        out[vid] = SPLITS[idx]
    return out


def load_eval_frame(path, geometry: EvalGeometry = EvalGeometry()) -> Image:
    """Read a frame and apply the canonical evaluation preprocessing."""
    return geometry.preprocess(read_image(path))


def random_crops(frame: Image, n: int, rng: np.random.Generator,
                 geometry: EvalGeometry = EvalGeometry()) -> list[Image]:
    """Training-time views: random ``crop_size`` windows of the resized frame."""
    full = geometry.frame(frame)
    max_x = full.width - geometry.crop_size
    max_y = full.height - geometry.crop_size
    out = []
    for _ in range(n):
        x0 = int(rng.integers(0, max_x + 1))
        y0 = int(rng.integers(0, max_y + 1))
        out.append(crop(full, x0, y0, geometry.crop_size, geometry.crop_size))
    return out


# --- synthetic video ---------------------------------------------------------

SHAPES = ("circle", "square", "triangle", "cross")
PALETTE = (
    (0.85, 0.18, 0.16),
    (0.16, 0.34, 0.88),
    (0.18, 0.72, 0.22),
    (0.92, 0.78, 0.12),
)


@dataclass(frozen=True)
class SynthVideoConfig:
    num_classes: int = 8
    num_shots: int = 400
    shots_per_video: int = 2
    frames_per_shot: int = 11
    frame_size: tuple = (64, 64)  # width, height
    shape_radius: tuple = (13.0, 17.0)
    placement: float = 6.0  # max |initial centre - frame centre|, px per axis
    velocity: tuple = (0.2, 1.2)  # px per frame
    jitter: float = 0.35  # px, per-frame position noise
    drift: float = 0.012  # max |brightness change| per frame, unit-interval
    texture: float = 0.08
    split_fractions: tuple = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.frames_per_shot % 2 != 1 or self.frames_per_shot < 1:
            raise ValueError("frames_per_shot must be odd so an anchor exists")
        if self.frames_per_shot > 2 * max(OFFSETS) + 1:
            raise ValueError("at most 5 neighbours per side")
        if not 1 <= self.num_classes <= len(SHAPES) * len(PALETTE):
            raise ValueError(f"num_classes must be in [1, {len(SHAPES) * len(PALETTE)}]")
        if self.num_shots < 1 or self.shots_per_video < 1:
            raise ValueError("num_shots and shots_per_video must be positive")
        for name in ("shape_radius", "velocity"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be a non-negative (lo, hi) range")
        if self.jitter < 0 or self.drift < 0 or self.texture < 0 or self.placement < 0:
            raise ValueError("jitter, drift and texture must be non-negative")

    @property
    def half_window(self) -> int:
        return self.frames_per_shot // 2

    def class_of(self, label: int) -> tuple[str, tuple]:
        n_colors = math.ceil(self.num_classes / len(SHAPES))
        return SHAPES[label % len(SHAPES)], PALETTE[(label // len(SHAPES)) % n_colors]


def _box_sdf(px, py, hx, hy):
    dx = np.abs(px) - hx
    dy = np.abs(py) - hy
    outside = np.hypot(np.maximum(dx, 0), np.maximum(dy, 0))
    return outside + np.minimum(np.maximum(dx, dy), 0)


def shape_sdf(shape: str, px: np.ndarray, py: np.ndarray, r: float) -> np.ndarray:
    """Signed distance (px) to a shape centred at the origin; negative inside."""
    if shape == "circle":
        return np.hypot(px, py) - r
    if shape == "square":
        return _box_sdf(px, py, 0.8 * r, 0.8 * r)
    if shape == "cross":
        arm = 0.32 * r
        return np.minimum(_box_sdf(px, py, r, arm), _box_sdf(px, py, arm, r))
    if shape == "triangle":
        # equilateral, apex up; max over the three edge half-planes
        d = 0.5 * r
        planes = [(0.0, 1.0), (math.sqrt(3) / 2, -0.5), (-math.sqrt(3) / 2, -0.5)]
        return np.max([nx * px + ny * py - d for nx, ny in planes], axis=0)
    raise ValueError(f"unknown shape {shape!r}")


def _background(rng, w, h, texture):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.35, 0.6)
    tint = rng.uniform(-0.04, 0.04, size=3)
    field = np.zeros((h, w))
    for _ in range(3):
        fx, fy = rng.uniform(0.02, 0.15, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        field += np.sin(2 * np.pi * (fx * xs + fy * ys) + phase)
    field = field / 3.0 * texture
    grain = rng.normal(0.0, texture / 4.0, size=(h, w, 1))
    return base + tint + field[..., None] + grain


def render_shot(config: SynthVideoConfig, label: int, shot_key) -> dict:
    """Render all frames of one shot; returns ``{offset: Image}`` (0 = anchor)."""
    rng = keyed_stream(config.seed, "shot", shot_key)
    w, h = config.frame_size
    shape, color = config.class_of(label)
    radius = rng.uniform(*config.shape_radius)
    center = np.array([w / 2, h / 2]) + rng.uniform(-config.placement, config.placement, size=2)
    speed = rng.uniform(*config.velocity)
    angle = rng.uniform(0, 2 * np.pi)
    velocity = speed * np.array([np.cos(angle), np.sin(angle)])
    drift = rng.uniform(-config.drift, config.drift)
    bg = _background(rng, w, h, config.texture)
    shade = np.asarray(color) + rng.uniform(-0.05, 0.05, size=3)
    hw = config.half_window
    jitter = rng.normal(0.0, config.jitter, size=(2 * hw + 1, 2)) if config.jitter > 0 else np.zeros((2 * hw + 1, 2))

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    frames = {}
    for t in range(-hw, hw + 1):
        cx, cy = center + velocity * t + jitter[t + hw]
        cover = np.clip(0.5 - shape_sdf(shape, xs - cx, ys - cy, radius), 0.0, 1.0)[..., None]
        pixels = bg * (1 - cover) + shade * cover + drift * t
        frames[t] = Image(quantize(pixels))
    return frames


def generate_synthetic(config: SynthVideoConfig, out_dir, manifest_name: str = "manifest.csv") -> FrameManifest:
    """Render a synthetic video dataset under ``out_dir`` and write its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_videos = math.ceil(config.num_shots / config.shots_per_video)
    video_ids = [f"v{i:05d}" for i in range(n_videos)]
    splits = split_by_video(video_ids, config.split_fractions, config.seed)
    label_rng = keyed_stream(config.seed, "labels")
    labels = label_rng.integers(0, config.num_classes, size=config.num_shots)

    entries = []
    hw = config.half_window
    for s in range(config.num_shots):
        vid = video_ids[s // config.shots_per_video]
        shot = f"{vid}_s{s % config.shots_per_video:02d}"
        label = int(labels[s])
        frames = render_shot(config, label, shot)
        rel_dir = Path("frames") / shot
        (out_dir / rel_dir).mkdir(parents=True, exist_ok=True)
        paths = {}
        for t, img in frames.items():
            rel = rel_dir / (f"f{t:+d}.png" if t else "anchor.png")
            write_png(img, out_dir / rel)
            paths[t] = rel.as_posix()
        neighbors = {k: paths[k] for k in OFFSETS if abs(k) <= hw}
        entries.append(ManifestEntry(vid, shot, splits[vid], label, paths[0], neighbors))

    manifest = FrameManifest(tuple(entries), config.num_classes, out_dir)
    meta = {
        "classes": [f"{config.class_of(k)[0]}-{k // len(SHAPES)}" for k in range(config.num_classes)],
        "generator": asdict(config),
    }
    save_manifest(manifest, out_dir / manifest_name, meta)
    return manifest
