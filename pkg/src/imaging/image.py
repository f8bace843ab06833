# src/imaging/image.py
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionMismatchError(ValueError):
    """Two rasters (or a raster and its feature targets) disagree in size."""


def require_same_size(a: "Image", b: "Image", what: str) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatchError(
            f"{what}: {a.height} x {a.width} vs {b.height} x {b.width}"
        )


@dataclass(frozen=True)
class Image:
    """
    H x W x C raster with values in [0, 1].

    `data` is a float64 array of shape (height, width, channels), row-major,
    channels in {1, 3}. Constructed through `from_array`, which validates.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = self.data
        if arr.ndim != 3:
            raise ValueError(f"Image data must be H x W x C, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ValueError(f"Image channels must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Image must be at least 1 x 1, got {arr.shape[:2]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Image data contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"Image values must lie in [0, 1], got [{arr.min()}, {arr.max()}]"
            )

    @classmethod
    def from_array(cls, values: np.ndarray, *, clip: bool = False) -> "Image":
        """
        Build an Image from an (H, W), (H, W, 1) or (H, W, 3) array.

        clip=True projects values onto [0, 1] first (used for optimizer output).
        """
        arr = np.array(values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if clip:
            arr = np.clip(arr, 0.0, 1.0)
        arr.setflags(write=False)
        return cls(arr)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def to_chw(self, dtype=np.float64) -> np.ndarray:
        """Network layout C x H x W."""
        return np.ascontiguousarray(self.data.transpose(2, 0, 1), dtype=dtype)


def to_rgb(img: Image) -> Image:
    """
    Replicate a single band into three identical channels.

    3-channel input is returned unchanged.
    """
    if img.channels == 3:
        return img
    return Image.from_array(np.repeat(img.data, 3, axis=2))


def _axis_coords(src_len: int, dst_len: int):
    """
    Align-corners sample positions along one axis.

    src = dst * (src_len - 1) / (dst_len - 1); a single destination sample,
    or a single source sample, maps to source position 0.
    """
    if dst_len == 1 or src_len == 1:
        pos = np.zeros(dst_len, dtype=np.float64)
    else:
        scale = (src_len - 1) / (dst_len - 1)
        pos = np.arange(dst_len, dtype=np.float64) * scale

    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src_len - 1)
    hi = np.minimum(lo + 1, src_len - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(img: Image, new_h: int, new_w: int) -> Image:
    """
    Bilinear resampling with the align-corners mapping.

    Channels are preserved. Every output value is a convex combination of
    input values, so [0, 1] maps into [0, 1].
    """
    if new_h < 1 or new_w < 1:
        raise ValueError(f"Target size must be >= 1 x 1, got {new_h} x {new_w}")

    src = img.data
    y0, y1, wy = _axis_coords(img.height, new_h)
    x0, x1, wx = _axis_coords(img.width, new_w)

    wy = wy[:, None, None]
    wx = wx[None, :, None]

    top = src[y0][:, x0] * (1.0 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1.0 - wx) + src[y1][:, x1] * wx
    out = top * (1.0 - wy) + bottom * wy

    # Convex combinations can drift one ulp past the bounds
    return Image.from_array(out, clip=True)


def resize_like(img: Image, reference: Image) -> Image:
    """Resize `img` to the reference's height and width (no-op when equal)."""
    if img.height == reference.height and img.width == reference.width:
        return img
    return bilinear_resize(img, reference.height, reference.width)
