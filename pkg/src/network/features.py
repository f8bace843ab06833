# src/network/features.py
"""
Content and style features on top of one forward pass.

  - content: the chosen conv layer's pre-activation map, flattened row-major
  - style:   one Gram matrix per pooling stage, G = F F^T / (C * M)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .vggnet import (
    ActivationCache,
    ContentLayer,
    ImageLike,
    PoolingMode,
    ShapeMismatchError,
    VggWeights,
    forward,
)


@dataclass(frozen=True)
class ContentFeatures:
    values: np.ndarray           # flat, length C*H*W
    shape: Tuple[int, int, int]  # (C, H, W) of the source map

    def as_map(self) -> np.ndarray:
        return self.values.reshape(self.shape)


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray  # C x C, exactly symmetric
    source_shape: Tuple[int, int, int]

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class StyleFeatures:
    blocks: Tuple[GramMatrix, ...]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([b.values.ravel() for b in self.blocks])

    def distance(self, other: "StyleFeatures") -> float:
        """Squared Euclidean distance over all blocks, equal block weights."""
        if len(self.blocks) != len(other.blocks):
            raise ShapeMismatchError(
                f"Style block counts differ: {len(self.blocks)} vs {len(other.blocks)}"
            )
        total = 0.0
        for mine, theirs in zip(self.blocks, other.blocks):
            if mine.values.shape != theirs.values.shape:
                raise ShapeMismatchError(
                    f"Gram shapes differ: {mine.values.shape} vs {theirs.values.shape}"
                )
            diff = mine.values.astype(np.float64) - theirs.values.astype(np.float64)
            total += float(np.sum(diff * diff))
        return total


def gram(feature_map: np.ndarray) -> GramMatrix:
    """
    G[a, b] = sum_{y,x} F[a,y,x] F[b,y,x] / (C * H * W)

    The upper triangle is mirrored so G is symmetric bit for bit.
    """
    if feature_map.ndim != 3:
        raise ShapeMismatchError(f"Feature map must be C x H x W, got {feature_map.shape}")
    c, h, w = feature_map.shape
    flat = feature_map.reshape(c, h * w)
    g = (flat @ flat.T) / (c * h * w)
    g = np.triu(g) + np.triu(g, 1).T
    return GramMatrix(values=g, source_shape=(c, h, w))


def gram_loss_grad(
    feature_map: np.ndarray,
    current: GramMatrix,
    target: GramMatrix,
) -> np.ndarray:
    """
    d/dF of sum_{a,b} (G - G_target)^2:
        (4 / (C * M)) * sum_b (G - G_target)[a, b] * F[b, y, x]
    """
    if current.values.shape != target.values.shape:
        raise ShapeMismatchError(
            f"Gram shapes differ: {current.values.shape} vs {target.values.shape}"
        )
    c, h, w = feature_map.shape
    if current.values.shape != (c, c):
        raise ShapeMismatchError(
            f"Gram {current.values.shape} does not belong to a map with {c} channels"
        )
    diff = (current.values - target.values).astype(feature_map.dtype, copy=False)
    grad = (4.0 / (c * h * w)) * (diff @ feature_map.reshape(c, h * w))
    return grad.reshape(c, h, w)


# ---------- Extraction ----------


def content_from_cache(cache: ActivationCache, layer: ContentLayer = ContentLayer.CONV5_4) -> ContentFeatures:
    fmap = cache.conv_output(ContentLayer(layer).index)
    return ContentFeatures(values=fmap.ravel().copy(), shape=tuple(fmap.shape))


def style_from_cache(cache: ActivationCache) -> StyleFeatures:
    return StyleFeatures(blocks=tuple(gram(p) for p in cache.pools))


def extract_content(
    weights: VggWeights,
    image: ImageLike,
    layer_choice: ContentLayer = ContentLayer.CONV5_4,
    mode: PoolingMode = PoolingMode.MAX,
) -> ContentFeatures:
    return content_from_cache(forward(weights, image, mode), layer_choice)


def extract_style(
    weights: VggWeights,
    image: ImageLike,
    mode: PoolingMode = PoolingMode.MAX,
) -> StyleFeatures:
    return style_from_cache(forward(weights, image, mode))
