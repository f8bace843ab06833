# src/imaging/synthgen.py
"""
Synthetic optical / SAR pair with a known change mask.

The pre-event scene is drawn as a textured, shaded optical image; the
post-event scene (base shapes plus new "change" rectangles) is drawn as a
speckled single-band SAR intensity image. All randomness comes from
derive_stream(seed, PURPOSE_SYNTH).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from src.analytics.detect import ChangeMap
from src.imaging.image import Image, bilinear_resize
from src.imaging.pnm import save_pnm
from src.network.vggnet import MIN_INPUT_SIZE
from src.utils.rng import PURPOSE_SYNTH, UNIT, RngStream, derive_stream

PathLike = Union[str, Path]

BACKGROUND = 0
CHANGE_CLASS = 4

# ---------- Reflectivity classes ----------

# optical base colour per class
CLASS_COLORS = np.array([
    [0.35, 0.45, 0.25],   # 0 vegetation background
    [0.62, 0.60, 0.58],   # 1 concrete
    [0.20, 0.32, 0.55],   # 2 water
    [0.68, 0.54, 0.36],   # 3 bare soil
    [0.88, 0.82, 0.74],   # 4 new construction
])

# sinusoidal texture: (cycles along x, cycles along y, amplitude) per class
CLASS_TEXTURE = [
    (3.0, 5.0, 0.10),
    (8.0, 0.0, 0.15),
    (1.0, 1.0, 0.04),
    (5.0, 7.0, 0.12),
    (0.0, 10.0, 0.18),
]

# mean SAR backscatter per class
CLASS_SAR_MEAN = np.array([0.30, 0.62, 0.06, 0.42, 0.85])

SPECKLE_LOOKS = 4


@dataclass(frozen=True)
class Shape:
    kind: str        # "rect" | "disc"
    top: int
    left: int
    height: int      # for discs: 2 * radius + 1
    width: int
    cls: int

    def mask(self, size: int) -> np.ndarray:
        yy, xx = np.mgrid[0:size, 0:size]
        if self.kind == "rect":
            return (
                (yy >= self.top) & (yy < self.top + self.height)
                & (xx >= self.left) & (xx < self.left + self.width)
            )
        r = (self.height - 1) / 2.0
        cy, cx = self.top + r, self.left + r
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


@dataclass
class Scene:
    size: int
    shapes: List[Shape] = field(default_factory=list)    # present before and after
    changes: List[Shape] = field(default_factory=list)   # present only after

    def labels(self, post: bool) -> np.ndarray:
        out = np.full((self.size, self.size), BACKGROUND, dtype=np.int64)
        for shape in self.shapes + (self.changes if post else []):
            out[shape.mask(self.size)] = shape.cls
        return out

    def truth_bits(self) -> np.ndarray:
        return self.labels(post=False) != self.labels(post=True)


# ---------- Scene layout ----------


def _between(stream: RngStream, lo: int, hi: int) -> int:
    """Uniform integer in [lo, hi]."""
    return lo + stream.next_below(hi - lo + 1)


def _random_base_shape(stream: RngStream, size: int, cls: int, kind: str) -> Shape:
    lo, hi = max(3, size // 10), max(4, size // 4)
    if kind == "disc":
        radius = _between(stream, lo // 2 + 1, hi // 2 + 1)
        d = 2 * radius + 1
        return Shape("disc", _between(stream, 0, size - d), _between(stream, 0, size - d), d, d, cls)
    h, w = _between(stream, lo, hi), _between(stream, lo, hi)
    return Shape("rect", _between(stream, 0, size - h), _between(stream, 0, size - w), h, w, cls)


def build_scene(stream: RngStream, size: int, change_fraction: float) -> Scene:
    """
    Base layout of rectangles (classes 1, 3) and discs (class 2), then
    change rectangles added until the change mask reaches the pixel budget.
    """
    scene = Scene(size=size)
    n_base = max(4, (size * size) // 400)
    for i in range(n_base):
        cls = 1 + (i % 3)
        kind = "disc" if cls == 2 else "rect"
        scene.shapes.append(_random_base_shape(stream, size, cls, kind))

    target = int(round(change_fraction * size * size))
    if target == 0:
        return scene

    # a change rectangle is kept only if the mask stays within +15% of the budget
    ceiling = int(target * 1.15)
    covered = np.zeros((size, size), dtype=bool)
    count = 0
    attempts = 0
    while count < 0.9 * target and attempts < 400:
        attempts += 1
        remaining = target - count
        side_max = max(2, min(size // 2, int(np.sqrt(remaining) * 1.5)))
        h = _between(stream, 2, side_max)
        w_max = max(2, min(size // 2, remaining // h))
        w = _between(stream, max(2, w_max // 2), w_max)
        shape = Shape("rect", _between(stream, 0, size - h), _between(stream, 0, size - w), h, w, CHANGE_CLASS)
        grown = covered | shape.mask(size)
        new_count = int(np.count_nonzero(grown))
        if new_count > ceiling or new_count == count:
            continue
        scene.changes.append(shape)
        covered, count = grown, new_count
    return scene


# ---------- Rendering ----------


def render_optical(labels: np.ndarray, stream: RngStream) -> Image:
    """Class colour x per-class sinusoidal texture x smooth planar shading."""
    size = labels.shape[0]
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size

    phases = stream.uniform_array(len(CLASS_TEXTURE)) * 2.0 * np.pi
    texture = np.ones_like(yy)
    for cls, (fx, fy, amp) in enumerate(CLASS_TEXTURE):
        where = labels == cls
        wave = 1.0 + amp * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phases[cls])
        texture[where] = wave[where]

    gx, gy = stream.uniform_array(2) * 0.3 - 0.15
    shading = 0.9 + gx * (xx - 0.5) + gy * (yy - 0.5)

    rgb = CLASS_COLORS[labels] * (texture * shading)[:, :, None]
    return Image.from_array(rgb, clip=True)


def render_sar(labels: np.ndarray, stream: RngStream) -> Image:
    """Class mean x gamma(4 looks, mean 1) speckle, clipped to [0, 1]."""
    size = labels.shape[0]
    u = stream.uniform_array(SPECKLE_LOOKS * size * size).reshape(SPECKLE_LOOKS, size, size)
    u[u == 0.0] = UNIT
    speckle = -np.log(u).sum(axis=0) / SPECKLE_LOOKS
    return Image.from_array(CLASS_SAR_MEAN[labels] * speckle, clip=True)


def gen_pair(seed: int, size: int, change_fraction: float = 0.1) -> Tuple[Image, Image, ChangeMap]:
    """
    Returns:
        (optical 3-channel pre-event, SAR 1-channel post-event, truth map)
    """
    if size < MIN_INPUT_SIZE:
        raise ValueError(f"Synthetic size must be >= {MIN_INPUT_SIZE}, got {size}")
    if not 0.0 <= change_fraction <= 0.5:
        raise ValueError(f"change_fraction must lie in [0, 0.5], got {change_fraction}")

    stream = derive_stream(seed, PURPOSE_SYNTH)
    scene = build_scene(stream, size, change_fraction)
    optical = render_optical(scene.labels(post=False), stream)
    sar = render_sar(scene.labels(post=True), stream)
    return optical, sar, ChangeMap.from_bits(scene.truth_bits())


def write_pair(
    out_dir: PathLike,
    optical: Image,
    sar: Image,
    truth: ChangeMap,
    sar_downscale: int = 1,
) -> List[Path]:
    """Write opt.ppm, sar.pgm and truth.pgm; SAR optionally at size // factor."""
    if sar_downscale < 1:
        raise ValueError(f"sar_downscale must be >= 1, got {sar_downscale}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if sar_downscale > 1:
        sar = bilinear_resize(sar, max(1, sar.height // sar_downscale), max(1, sar.width // sar_downscale))

    paths = [out / "opt.ppm", out / "sar.pgm", out / "truth.pgm"]
    save_pnm(optical, paths[0])
    save_pnm(sar, paths[1])
    save_pnm(truth.to_image(), paths[2])
    return paths
