"""Synthetic scene dataset, folder ingestion, and the split/run protocol.

The synthetic generator renders four procedurally textured scene motifs,
chosen so that telling them apart needs spatial feature extraction rather
than raw pixel statistics:

* striped: a band of parallel bright stripes (runway-like),
* grid: two orthogonal families of lines (parking-lot-like),
* blobs: a cluster of small bright blobs (forest-like),
* concentric: rings around one or more centers (storage-tank-like).

Each sample draws its own position, scale, orientation, contrast and color
tint, over a low-frequency textured background plus Gaussian pixel noise.
Everything is deterministic given the dataset seed: sample (class, index)
pairs seed their own generator, so any subset regenerates identically.

Real image folders (one class per subdirectory, PNG/JPEG) load through the
same SceneSample type; class indices follow the alphabetical subdirectory
order so no sidecar metadata is needed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "MOTIFS",
    "SceneSample",
    "DatasetSplit",
    "SyntheticSpec",
    "ProtocolResult",
    "generate_synthetic",
    "load_image_folder",
    "bilinear_resize",
    "stratified_split",
    "run_protocol",
    "format_mean_std",
    "write_manifest",
]

MOTIFS = ("striped", "grid", "blobs", "concentric")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


@dataclass(frozen=True)
class SceneSample:
    image: np.ndarray  # [3, S, S] float64 in [0, 1]
    label: int
    id: str
    source: str = ""


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[SceneSample, ...]
    test: tuple[SceneSample, ...]
    train_ratio: float
    seed: int


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    image_size: int = 64
    samples_per_class: int = 250
    noise_std: float = 0.05

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(MOTIFS):
            raise ValueError(
                f"SyntheticSpec: num_classes must be in [2, {len(MOTIFS)}], "
                f"got {self.num_classes}"
            )
        if self.image_size < 8:
            raise ValueError("SyntheticSpec: image_size must be at least 8")
        if self.samples_per_class < 1:
            raise ValueError("SyntheticSpec: samples_per_class must be positive")
        if self.noise_std < 0:
            raise ValueError("SyntheticSpec: noise_std must be nonnegative")


def _coordinate_grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    axis = (np.arange(size) + 0.5) / size
    return np.meshgrid(axis, axis, indexing="ij")


def _soft_band(values: np.ndarray, threshold: float, softness: float) -> np.ndarray:
    return np.clip((values - threshold) / softness, 0.0, 1.0)


def _render_striped(rng, yy, xx):
    theta = rng.uniform(0.0, math.pi)
    u = xx * math.cos(theta) + yy * math.sin(theta)
    v = -xx * math.sin(theta) + yy * math.cos(theta)
    period = rng.uniform(0.12, 0.2)
    phase = rng.uniform(0.0, 2 * math.pi)
    grating = 0.5 + 0.5 * np.cos(2 * math.pi * u / period + phase)
    stripes = _soft_band(grating, 0.4, 0.2)
    center = rng.uniform(0.3, 0.7)
    half_width = rng.uniform(0.3, 0.45)
    band = _soft_band(half_width - np.abs(v - center), 0.0, 0.04)
    return stripes * band


def _stamp_dots(rng, yy, xx, points, sigma):
    """Render small bright gaussian dots at the given [0,1]^2 points.

    The dot element is shared by the grid / blobs / concentric motifs so
    those classes differ mainly in spatial arrangement, not local texture.
    """
    out = np.zeros_like(yy)
    for py, px in points:
        amp = rng.uniform(0.7, 1.0)
        out += amp * np.exp(-((yy - py) ** 2 + (xx - px) ** 2) / (2 * sigma * sigma))
    return np.clip(out, 0.0, 1.0)


def _render_grid(rng, yy, xx):
    # dots on a rotated square lattice (parking-stall arrangement); shares the
    # dot element with the blobs class, so the pair differs in peak geometry
    # (evenly spaced vs clumped) rather than local texture
    theta = rng.uniform(0.0, math.pi / 2)
    spacing = rng.uniform(0.11, 0.16)
    cy, cx = rng.uniform(0.4, 0.6, size=2)
    half = rng.uniform(0.24, 0.34)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    offset_u = rng.uniform(0.0, spacing)
    offset_v = rng.uniform(0.0, spacing)
    points = []
    steps = int(half / spacing) + 2
    for i in range(-steps, steps + 1):
        for j in range(-steps, steps + 1):
            u = i * spacing + offset_u - spacing * steps / 2.0
            v = j * spacing + offset_v - spacing * steps / 2.0
            if abs(u) > half or abs(v) > half:
                continue
            jy, jx = rng.normal(0.0, 0.004, size=2)
            points.append((cy + u * cos_t + v * sin_t + jy,
                           cx - u * sin_t + v * cos_t + jx))
    sigma = rng.uniform(0.013, 0.02)
    return _stamp_dots(rng, yy, xx, points, sigma)


def _render_blobs(rng, yy, xx):
    # the same dots gathered into tight clumps (forest-canopy arrangement)
    cy, cx = rng.uniform(0.4, 0.6, size=2)
    spread = rng.uniform(0.16, 0.26)
    total = int(rng.integers(16, 33))
    clumps = int(rng.integers(3, 7))
    points = []
    centers = []
    for _ in range(clumps):
        angle = rng.uniform(0.0, 2 * math.pi)
        dist = spread * math.sqrt(rng.uniform(0.0, 1.0))
        centers.append((cy + dist * math.sin(angle), cx + dist * math.cos(angle)))
    for k in range(total):
        ky, kx = centers[k % clumps]
        radius = rng.uniform(0.0, 0.032)
        angle = rng.uniform(0.0, 2 * math.pi)
        points.append((ky + radius * math.sin(angle), kx + radius * math.cos(angle)))
    sigma = rng.uniform(0.013, 0.02)
    return _stamp_dots(rng, yy, xx, points, sigma)


def _render_concentric(rng, yy, xx):
    # bright circular bands around a few centers (storage-tank arrangement)
    count = int(rng.integers(2, 5))
    out = np.zeros_like(yy)
    for _ in range(count):
        cy, cx = rng.uniform(0.2, 0.8, size=2)
        outer = rng.uniform(0.12, 0.22)
        ring_period = rng.uniform(0.05, 0.08)
        r = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        rings = 0.5 + 0.5 * np.cos(2 * math.pi * r / ring_period)
        rings = _soft_band(rings, 0.5, 0.3)
        disk = _soft_band(outer - r, 0.0, 0.02)
        out = np.maximum(out, rings * disk)
    return out


_RENDERERS = {
    "striped": _render_striped,
    "grid": _render_grid,
    "blobs": _render_blobs,
    "concentric": _render_concentric,
}


def _render_sample(spec: SyntheticSpec, seed: int, label: int, index: int) -> SceneSample:
    rng = np.random.default_rng([seed, label, index])
    yy, xx = _coordinate_grid(spec.image_size)

    base = rng.uniform(0.24, 0.34)
    background = np.full_like(yy, base)
    for _ in range(3):
        amp = rng.uniform(0.01, 0.03)
        freq = rng.uniform(1.0, 3.0)
        theta = rng.uniform(0.0, math.pi)
        phase = rng.uniform(0.0, 2 * math.pi)
        background += amp * np.cos(
            2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase
        )

    motif = _RENDERERS[MOTIFS[label]](rng, yy, xx)
    strength = rng.uniform(0.45, 0.65)
    gray = background + strength * motif

    tint = rng.uniform(0.82, 1.0, size=3)
    image = tint[:, None, None] * gray[None, :, :]
    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    sample_id = f"syn-{seed}-c{label}-i{index}"
    return SceneSample(image=image, label=label, id=sample_id,
                       source=f"synthetic:{MOTIFS[label]}")


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[SceneSample]:
    """Render the class-balanced synthetic dataset; deterministic given seed."""
    samples = []
    for label in range(spec.num_classes):
        for index in range(spec.samples_per_class):
            samples.append(_render_sample(spec, seed, label, index))
    return samples


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize [C,H,W] with bilinear interpolation at half-pixel centers."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    sy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    sx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    dy = (sy - y0)[None, :, None]
    dx = (sx - x0)[None, None, :]
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = image[:, y0c][:, :, x0c] * (1 - dx) + image[:, y0c][:, :, x1c] * dx
    bottom = image[:, y1c][:, :, x0c] * (1 - dx) + image[:, y1c][:, :, x1c] * dx
    return top * (1 - dy) + bottom * dy


def load_image_folder(root, image_size: int) -> list[SceneSample]:
    """Load a class-per-subdirectory image tree.

    Subdirectories in alphabetical order define the class indices. Images are
    decoded, bilinearly resized to image_size x image_size, and scaled to
    [0, 1]. Unreadable files are skipped with a warning; a class with no
    decodable image is an error.
    """
    from PIL import Image, UnidentifiedImageError

    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"load_image_folder: {root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise ValueError(
            f"load_image_folder: need at least 2 class subdirectories, "
            f"found {len(class_dirs)} in {root}"
        )
    samples: list[SceneSample] = []
    skipped = 0
    for label, class_dir in enumerate(class_dirs):
        loaded = 0
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        for path in files:
            try:
                with Image.open(path) as img:
                    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
            except (OSError, UnidentifiedImageError, ValueError) as exc:
                skipped += 1
                warnings.warn(f"skipping unreadable image {path}: {exc}")
                continue
            chw = rgb.transpose(2, 0, 1)
            resized = np.clip(bilinear_resize(chw, image_size, image_size), 0.0, 1.0)
            rel = path.relative_to(root).as_posix()
            samples.append(SceneSample(image=resized, label=label, id=rel,
                                       source=str(path)))
            loaded += 1
        if loaded == 0:
            raise ValueError(
                f"load_image_folder: class directory {class_dir} has no decodable images"
            )
    if skipped:
        warnings.warn(f"load_image_folder: skipped {skipped} unreadable file(s)")
    return samples


def _train_count(ratio: float, count: int) -> int:
    # ceil of the intended decimal product; the round() guards against float
    # artifacts like 0.8 * 250 = 200.0000000000003
    n = math.ceil(round(ratio * count, 9))
    return min(max(n, 1), count - 1)


def stratified_split(samples, train_ratio: float, seed: int) -> DatasetSplit:
    """Per-class shuffle, first ceil(ratio * count) to train; disjoint by construction."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError(f"stratified_split: train_ratio must be in (0, 1), got {train_ratio}")
    by_label: dict[int, list[SceneSample]] = {}
    for sample in samples:
        by_label.setdefault(sample.label, []).append(sample)
    rng = np.random.default_rng(seed)
    train: list[SceneSample] = []
    test: list[SceneSample] = []
    for label in sorted(by_label):
        group = by_label[label]
        if len(group) < 2:
            raise ValueError(
                f"stratified_split: class {label} has {len(group)} sample(s), need >= 2"
            )
        order = rng.permutation(len(group))
        n_train = _train_count(train_ratio, len(group))
        for pos, idx in enumerate(order):
            (train if pos < n_train else test).append(group[idx])
    return DatasetSplit(train=tuple(train), test=tuple(test),
                        train_ratio=train_ratio, seed=seed)


@dataclass(frozen=True)
class ProtocolResult:
    accuracies: tuple[float, ...]
    mean: float
    std: float  # population standard deviation
    formatted: str
    split_seeds: tuple[int, ...] = field(default=())
    init_seeds: tuple[int, ...] = field(default=())


def format_mean_std(accuracies) -> str:
    """'mean+/-std' in percent, two decimals, population std."""
    accs = np.asarray(accuracies, dtype=np.float64)
    return f"{accs.mean() * 100:.2f}±{accs.std() * 100:.2f}"


def run_protocol(run_fn, base_seed: int, runs: int) -> ProtocolResult:
    """Independent repeated runs: run r gets split seed base_seed + r and
    init seed base_seed + 1000 + r. Reports per-run accuracy, the sample
    mean, and the population standard deviation."""
    if runs < 1:
        raise ValueError(f"run_protocol: runs must be >= 1, got {runs}")
    split_seeds = tuple(base_seed + r for r in range(runs))
    init_seeds = tuple(base_seed + 1000 + r for r in range(runs))
    accuracies = tuple(
        float(run_fn(r, split_seeds[r], init_seeds[r])) for r in range(runs)
    )
    arr = np.asarray(accuracies)
    return ProtocolResult(
        accuracies=accuracies,
        mean=float(arr.mean()),
        std=float(arr.std()),
        formatted=format_mean_std(arr),
        split_seeds=split_seeds,
        init_seeds=init_seeds,
    )


def write_manifest(samples, path) -> None:
    """Line-delimited records (id, source, label), one JSON object per sample."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(
                {"id": sample.id, "source": sample.source or sample.id,
                 "label": sample.label}
            ) + "\n")
