"""Image time series loading, pixel splits, and synthetic data generation.

Datasets are described by a JSON manifest pointing at co-registered 8-bit RGB
frames plus one annotation image whose colors encode (class, split) pairs via
a legend. A seeded generator produces synthetic phenological scenes (disk
"canopies" with class-specific seasonal signatures) for desk-scale runs.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, GenerationError

UNLABELED = -1
SPLIT_NONE = 0
SPLIT_TRAIN = 1
SPLIT_TEST = 2

_SPLIT_NAMES = {SPLIT_TRAIN: "train", SPLIT_TEST: "test"}
_SPLIT_IDS = {"train": SPLIT_TRAIN, "test": SPLIT_TEST}


@dataclass
class ImageTimeSeries:
    """Co-registered RGB frames over ordered timestamps."""

    frames: np.ndarray          # (M, H, W, 3) uint8
    timestamps: list[str]

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.uint8)
        if self.frames.ndim != 4 or self.frames.shape[3] != 3:
            raise DataError(f"frames must be (M, H, W, 3), got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise DataError("a time series needs at least one frame")
        if len(self.timestamps) != self.frames.shape[0]:
            raise DataError("timestamp count does not match frame count")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


@dataclass
class AnnotationMask:
    """Per-pixel class labels and train/test split assignment.

    ``labels`` uses ``UNLABELED`` (-1) for background; ``split`` is nonzero
    only where a label exists.
    """

    labels: np.ndarray          # (H, W) int16
    split: np.ndarray           # (H, W) int8
    class_names: list[str]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int16)
        self.split = np.asarray(self.split, dtype=np.int8)
        if self.labels.shape != self.split.shape:
            raise DataError("labels and split must share a shape")
        if ((self.split != SPLIT_NONE) & (self.labels == UNLABELED)).any():
            raise DataError("split assigned to an unlabeled pixel")
        if self.labels.max(initial=UNLABELED) >= len(self.class_names):
            raise DataError("label id exceeds class count")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class PixelIndex:
    """One annotated pixel: x is the column, y the row."""

    x: int
    y: int
    label: int
    split: str


@dataclass
class ClassSignature:
    """Temporal signature of one synthetic class.

    Channel value at frame t is
    ``clamp(chromaticity[ch] * (base + amplitude*sin(2*pi*(t+phase)/M)) * 255 + noise)``.
    """

    name: str
    base: float
    amplitude: float = 0.0
    phase: float = 0.0
    chromaticity: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)


@dataclass
class SyntheticSpec:
    """Deterministic description of a synthetic dataset (seed fixes all bytes)."""

    classes: list[ClassSignature]
    num_frames: int = 13
    height: int = 64
    width: int = 64
    blob_count: int = 6
    blob_radius: tuple[int, int] = (4, 8)
    noise_std: float = 5.0
    seed: int = 42
    background_base: float = 0.45

    def validate(self) -> None:
        if self.num_frames < 2:
            raise ConfigError("synthetic series needs num_frames >= 2")
        if not self.classes:
            raise ConfigError("synthetic spec needs at least one class")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ConfigError("synthetic class names must be unique")
        for c in self.classes:
            if abs(sum(c.chromaticity) - 1.0) > 1e-9:
                raise ConfigError(f"chromaticity of '{c.name}' must sum to 1")
        if self.blob_count < 1 or self.blob_radius[0] < 1 \
                or self.blob_radius[0] > self.blob_radius[1]:
            raise ConfigError("invalid blob layout")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def to_json(self) -> dict:
        return {
            "classes": [
                {"name": c.name, "base": c.base, "amplitude": c.amplitude,
                 "phase": c.phase, "chromaticity": list(c.chromaticity)}
                for c in self.classes
            ],
            "num_frames": self.num_frames, "height": self.height, "width": self.width,
            "blob_count": self.blob_count, "blob_radius": list(self.blob_radius),
            "noise_std": self.noise_std, "seed": self.seed,
            "background_base": self.background_base,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "SyntheticSpec":
        classes = [ClassSignature(name=c["name"], base=c["base"],
                                  amplitude=c.get("amplitude", 0.0),
                                  phase=c.get("phase", 0.0),
                                  chromaticity=tuple(c.get("chromaticity", (1/3, 1/3, 1/3))))
                   for c in payload["classes"]]
        spec = cls(classes=classes,
                   num_frames=payload.get("num_frames", 13),
                   height=payload.get("height", 64),
                   width=payload.get("width", 64),
                   blob_count=payload.get("blob_count", 6),
                   blob_radius=tuple(payload.get("blob_radius", (4, 8))),
                   noise_std=payload.get("noise_std", 5.0),
                   seed=payload.get("seed", 42),
                   background_base=payload.get("background_base", 0.45))
        spec.validate()
        return spec


def preset_spec(name: str) -> SyntheticSpec:
    """Built-in synthetic datasets.

    ``four-class``: phase-shifted seasonal signatures, the default end-to-end
    verification scene. ``intensity-pair``: two classes sharing chromaticity
    and differing only in brightness, which chromaticity normalization erases.
    """
    if name == "four-class":
        return SyntheticSpec(
            classes=[
                ClassSignature("evergreen", base=0.52, amplitude=0.10, phase=0.0,
                               chromaticity=(0.30, 0.45, 0.25)),
                ClassSignature("early-flowering", base=0.48, amplitude=0.30, phase=3.25,
                               chromaticity=(0.42, 0.33, 0.25)),
                ClassSignature("late-flowering", base=0.48, amplitude=0.30, phase=6.5,
                               chromaticity=(0.36, 0.30, 0.34)),
                ClassSignature("deciduous", base=0.55, amplitude=0.22, phase=9.75,
                               chromaticity=(0.33, 0.38, 0.29)),
            ],
            num_frames=13, height=112, width=112, blob_count=6, blob_radius=(4, 7),
            noise_std=5.0, seed=42)
    if name == "intensity-pair":
        return SyntheticSpec(
            classes=[
                ClassSignature("dim-canopy", base=0.3, amplitude=0.0,
                               chromaticity=(1 / 3, 1 / 3, 1 / 3)),
                ClassSignature("bright-canopy", base=0.6, amplitude=0.0,
                               chromaticity=(1 / 3, 1 / 3, 1 / 3)),
            ],
            num_frames=8, height=84, width=84, blob_count=6, blob_radius=(4, 7),
            noise_std=2.0, seed=7)
    raise ConfigError(f"unknown synthetic preset '{name}'")


# ---------------------------------------------------------------------------
# synthetic generation


def _signature_values(sig: ClassSignature, num_frames: int) -> np.ndarray:
    """Noise-free (M, 3) channel values for one signature."""
    t = np.arange(num_frames, dtype=np.float64)
    level = sig.base + sig.amplitude * np.sin(2.0 * np.pi * (t + sig.phase) / num_frames)
    values = np.outer(level, np.asarray(sig.chromaticity, dtype=np.float64)) * 255.0
    return values


def generate_synthetic(spec: SyntheticSpec) -> tuple[ImageTimeSeries, AnnotationMask]:
    """Render a labeled synthetic scene; a pure function of ``spec``.

    Each class is realized as ``blob_count`` non-overlapping disks whose split
    alternates train, test, train, ... so train and test regions are spatially
    disjoint. Background stays unlabeled.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    h, w, m = spec.height, spec.width, spec.num_frames
    labels = np.full((h, w), UNLABELED, dtype=np.int16)
    split = np.zeros((h, w), dtype=np.int8)
    placed: list[tuple[int, int, int]] = []
    yy, xx = np.mgrid[0:h, 0:w]

    rmin, rmax = spec.blob_radius
    for class_id in range(len(spec.classes)):
        for blob in range(spec.blob_count):
            for _ in range(500):
                r = int(rng.integers(rmin, rmax + 1))
                if h <= 2 * r or w <= 2 * r:
                    continue
                cy = int(rng.integers(r, h - r))
                cx = int(rng.integers(r, w - r))
                if all((cy - py) ** 2 + (cx - px) ** 2 >= (r + pr + 2) ** 2
                       for py, px, pr in placed):
                    break
            else:
                raise GenerationError(
                    f"could not place blob {blob} of class {class_id} without overlap; "
                    "use a smaller blob radius, fewer blobs, or a larger scene")
            placed.append((cy, cx, r))
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
            labels[disk] = class_id
            split[disk] = SPLIT_TRAIN if blob % 2 == 0 else SPLIT_TEST

    background = _signature_values(
        ClassSignature("background", base=spec.background_base), m)
    per_class = [_signature_values(sig, m) for sig in spec.classes]

    frames = np.empty((m, h, w, 3), dtype=np.uint8)
    for t in range(m):
        canvas = np.empty((h, w, 3), dtype=np.float64)
        canvas[:, :] = background[t]
        for class_id in range(len(spec.classes)):
            canvas[labels == class_id] = per_class[class_id][t]
        canvas += rng.normal(0.0, spec.noise_std, size=(h, w, 3))
        frames[t] = np.clip(np.rint(canvas), 0, 255).astype(np.uint8)

    series = ImageTimeSeries(frames, [f"t{t:02d}" for t in range(m)])
    mask = AnnotationMask(labels, split, [c.name for c in spec.classes])
    return series, mask


# ---------------------------------------------------------------------------
# manifest IO


def _split_palette(num_classes: int) -> dict[tuple[int, int], tuple[int, int, int]]:
    """Deterministic distinct colors per (class, split), never pure black."""
    palette: dict[tuple[int, int], tuple[int, int, int]] = {}
    for class_id in range(num_classes):
        hue = (0.11 + class_id * 0.618033988749895) % 1.0
        for split_id, sat in ((SPLIT_TRAIN, 0.85), (SPLIT_TEST, 0.40)):
            r, g, b = colorsys.hsv_to_rgb(hue, sat, 0.95)
            palette[(class_id, split_id)] = (
                int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))
    colors = list(palette.values())
    if len(set(colors)) != len(colors) or (0, 0, 0) in colors:
        raise GenerationError("mask palette collision; reduce the class count")
    return palette


def save_manifest(series: ImageTimeSeries, mask: AnnotationMask, out_dir: str | Path,
                  name: str = "synthetic") -> Path:
    """Write frames, annotation image, and manifest JSON; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frame_entries = []
    for t in range(series.num_frames):
        fname = f"frame_{t:03d}.png"
        Image.fromarray(series.frames[t]).save(out / fname)
        frame_entries.append({"timestamp": series.timestamps[t], "file": fname})

    palette = _split_palette(mask.num_classes)
    mask_img = np.zeros((series.height, series.width, 3), dtype=np.uint8)
    legend = []
    for class_id, class_name in enumerate(mask.class_names):
        for split_id in (SPLIT_TRAIN, SPLIT_TEST):
            color = palette[(class_id, split_id)]
            mask_img[(mask.labels == class_id) & (mask.split == split_id)] = color
            legend.append({"color": list(color), "class": class_name,
                           "split": _SPLIT_NAMES[split_id]})
    Image.fromarray(mask_img).save(out / "mask.png")

    manifest = {
        "name": name,
        "frames": frame_entries,
        "mask": {"file": "mask.png", "legend": legend},
        "unlabeled_color": [0, 0, 0],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def _load_rgb(path: Path) -> np.ndarray:
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_manifest(path: str | Path) -> tuple[ImageTimeSeries, AnnotationMask]:
    """Load a dataset described by a manifest JSON file.

    Fails with a ``DataError`` naming the offending entry on missing frames,
    frame dimension mismatches, unknown mask colors, or duplicated legend rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    payload = json.loads(path.read_text(encoding="utf-8"))
    for key in ("frames", "mask", "unlabeled_color"):
        if key not in payload:
            raise DataError(f"manifest missing required key '{key}'")
    base = path.parent

    frames = []
    timestamps = []
    for entry in payload["frames"]:
        arr = _load_rgb(base / entry["file"])
        if frames and arr.shape != frames[0].shape:
            raise DataError(
                f"frame dimension mismatch: '{entry['file']}' is "
                f"{arr.shape[1]}x{arr.shape[0]}, expected "
                f"{frames[0].shape[1]}x{frames[0].shape[0]}")
        frames.append(arr)
        timestamps.append(str(entry["timestamp"]))
    if not frames:
        raise DataError("manifest lists no frames")

    legend = payload["mask"]["legend"]
    unlabeled = tuple(int(v) for v in payload["unlabeled_color"])
    class_names: list[str] = []
    color_map: dict[tuple[int, int, int], tuple[int, int]] = {}
    seen_pairs: set[tuple[str, str]] = set()
    for entry in legend:
        color = tuple(int(v) for v in entry["color"])
        split_name = entry["split"]
        if split_name not in _SPLIT_IDS:
            raise DataError(f"legend split must be train|test, got '{split_name}'")
        pair = (entry["class"], split_name)
        if pair in seen_pairs:
            raise DataError(f"duplicate class name in legend: '{entry['class']}' ({split_name})")
        seen_pairs.add(pair)
        if color in color_map or color == unlabeled:
            raise DataError(f"legend color {list(color)} is not unique")
        if entry["class"] not in class_names:
            class_names.append(entry["class"])
        color_map[color] = (class_names.index(entry["class"]), _SPLIT_IDS[split_name])

    mask_arr = _load_rgb(base / payload["mask"]["file"])
    if mask_arr.shape != frames[0].shape:
        raise DataError("mask dimensions do not match the frames")
    h, w = mask_arr.shape[:2]
    labels = np.full((h, w), UNLABELED, dtype=np.int16)
    split = np.zeros((h, w), dtype=np.int8)
    flat = mask_arr.reshape(-1, 3)
    codes = flat[:, 0].astype(np.int32) * 65536 + flat[:, 1].astype(np.int32) * 256 \
        + flat[:, 2].astype(np.int32)
    known = {c[0] * 65536 + c[1] * 256 + c[2]: ids for c, ids in color_map.items()}
    known[unlabeled[0] * 65536 + unlabeled[1] * 256 + unlabeled[2]] = (UNLABELED, SPLIT_NONE)
    unique = np.unique(codes)
    for code in unique:
        code = int(code)
        if code not in known:
            idx = int(np.argmax(codes == code))
            y, x = divmod(idx, w)
            rgb = [code >> 16 & 255, code >> 8 & 255, code & 255]
            raise DataError(f"mask color {rgb} at pixel (x={x}, y={y}) is not in the legend")
        class_id, split_id = known[code]
        member = (codes == code).reshape(h, w)
        labels[member] = class_id
        split[member] = split_id

    series = ImageTimeSeries(np.stack(frames), timestamps)
    return series, AnnotationMask(labels, split, class_names)


# ---------------------------------------------------------------------------
# pixel populations


def labeled_pixels(mask: AnnotationMask) -> tuple[list[PixelIndex], list[PixelIndex]]:
    """All annotated pixels, partitioned into (train, test) per the mask."""
    train, test = [], []
    ys, xs = np.nonzero(mask.labels != UNLABELED)
    for y, x in zip(ys.tolist(), xs.tolist()):
        label = int(mask.labels[y, x])
        if mask.split[y, x] == SPLIT_TRAIN:
            train.append(PixelIndex(x, y, label, "train"))
        elif mask.split[y, x] == SPLIT_TEST:
            test.append(PixelIndex(x, y, label, "test"))
    return train, test


def split_validation(train_pixels: list[PixelIndex], fraction: float,
                     seed: int) -> tuple[list[PixelIndex], list[PixelIndex]]:
    """Hold out ``round(fraction * n)`` pixels uniformly at random.

    Returns (train, validation); both preserve the input order, the partition
    is a pure function of ``seed``.
    """
    if not train_pixels:
        raise DataError("cannot split an empty pixel list")
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"holdout fraction must be in (0, 1), got {fraction}")
    n = len(train_pixels)
    n_val = round(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = set(rng.permutation(n)[:n_val].tolist())
    train, validation = [], []
    for i, p in enumerate(train_pixels):
        if i in chosen:
            validation.append(PixelIndex(p.x, p.y, p.label, "validation"))
        else:
            train.append(p)
    return train, validation


def export_visual_rhythm(series: ImageTimeSeries, mask: AnnotationMask,
                         pixel: PixelIndex, normalized: bool) -> list[tuple]:
    """Per-frame channel trace of one labeled pixel: rows of (timestamp, R, G, B).

    ``normalized`` divides each frame's channels by their sum (zero-sum pixels
    map to all-zero rows).
    """
    if mask.labels[pixel.y, pixel.x] == UNLABELED:
        raise DataError(f"pixel (x={pixel.x}, y={pixel.y}) is unlabeled")
    rows = []
    for t in range(series.num_frames):
        r, g, b = (float(v) for v in series.frames[t, pixel.y, pixel.x])
        if normalized:
            total = r + g + b
            if total > 0:
                r, g, b = r / total, g / total, b / total
            else:
                r = g = b = 0.0
        rows.append((series.timestamps[t], r, g, b))
    return rows


def visual_rhythm_csv(rows: list[tuple]) -> str:
    lines = ["timestamp,R,G,B"]
    for ts, r, g, b in rows:
        lines.append(f"{ts},{r:.10g},{g:.10g},{b:.10g}")
    return "\n".join(lines) + "\n"
