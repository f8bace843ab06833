# src/network/vggnet.py
"""
Fixed VGG-19 convolutional graph: 16 conv layers (3x3, stride 1, pad 1),
ReLU after each, 2x2 stride-2 pooling after layers 2, 4, 8, 12 and 16.

Only the gradient with respect to the input image is ever needed, so the
backward pass carries no weight gradients.

Convolution is im2col + matmul with the reduction ordered channel-major,
then kernel row-major. BLAS may block that sum differently across builds;
results are reproducible run to run on one machine and agree across
builds to ~1e-5 relative in float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.imaging.image import Image
from src.utils.rng import PURPOSE_BASE_WEIGHTS, PURPOSE_RANDOMIZE, derive_stream

# ---------- Graph constants ----------

VGG19_PLAN: Tuple[int, ...] = (
    64, 64,
    128, 128,
    256, 256, 256, 256,
    512, 512, 512, 512,
    512, 512, 512, 512,
)

# 1-based conv layer indices followed by a pooling stage
POOL_AFTER: Tuple[int, ...] = (2, 4, 8, 12, 16)

NUM_LAYERS = 16
MIN_INPUT_SIZE = 32


class PoolingMode(str, Enum):
    MAX = "max"
    AVERAGE = "average"


class ContentLayer(str, Enum):
    """Conv layers eligible for content features, by conv index."""

    CONV3_4 = "conv3_4"
    CONV4_4 = "conv4_4"
    CONV5_4 = "conv5_4"

    @property
    def index(self) -> int:
        return {"conv3_4": 8, "conv4_4": 12, "conv5_4": 16}[self.value]


# ---------- Errors ----------


class ShapeMismatchError(ValueError):
    pass


class ImageTooSmallError(ValueError):
    pass


class CacheMismatchError(ValueError):
    pass


# ---------- Weights ----------


@dataclass(frozen=True)
class ConvLayer:
    kernel: np.ndarray  # (out, in, 3, 3) float32
    bias: np.ndarray    # (out,) float32

    def __post_init__(self) -> None:
        if self.kernel.ndim != 4 or self.kernel.shape[2:] != (3, 3):
            raise ShapeMismatchError(
                f"Conv kernel must be out x in x 3 x 3, got {self.kernel.shape}"
            )
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeMismatchError(
                f"Bias shape {self.bias.shape} does not match "
                f"{self.kernel.shape[0]} output channels"
            )

    @property
    def out_channels(self) -> int:
        return int(self.kernel.shape[0])

    @property
    def in_channels(self) -> int:
        return int(self.kernel.shape[1])


@dataclass(frozen=True)
class VggWeights:
    """The 16 conv layers of the extraction network, in graph order."""

    layers: Tuple[ConvLayer, ...]
    _cast_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.layers) != NUM_LAYERS:
            raise ShapeMismatchError(
                f"VGG graph needs {NUM_LAYERS} conv layers, got {len(self.layers)}"
            )
        if self.layers[0].in_channels != 3:
            raise ShapeMismatchError(
                f"Layer 1 must take 3 input channels, got {self.layers[0].in_channels}"
            )
        for i in range(1, NUM_LAYERS):
            prev, cur = self.layers[i - 1], self.layers[i]
            if cur.in_channels != prev.out_channels:
                raise ShapeMismatchError(
                    f"Layer {i + 1} takes {cur.in_channels} channels but layer {i} "
                    f"produces {prev.out_channels}"
                )

    @property
    def plan(self) -> Tuple[int, ...]:
        return tuple(layer.out_channels for layer in self.layers)

    def cast(self, dtype) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(kernel, bias) pairs in the compute dtype, memoised per dtype."""
        key = np.dtype(dtype).str
        if key not in self._cast_cache:
            self._cast_cache[key] = [
                (layer.kernel.astype(dtype, copy=False), layer.bias.astype(dtype, copy=False))
                for layer in self.layers
            ]
        return self._cast_cache[key]


def check_plan(weights: VggWeights, plan: Sequence[int] = VGG19_PLAN) -> None:
    """Raise ShapeMismatchError unless the channel plan matches `plan`."""
    if tuple(weights.plan) != tuple(plan):
        raise ShapeMismatchError(
            f"Channel plan {list(weights.plan)} does not match {list(plan)}"
        )


def make_weights(kernels: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> VggWeights:
    layers = tuple(
        ConvLayer(
            kernel=np.ascontiguousarray(k, dtype=np.float32),
            bias=np.ascontiguousarray(b, dtype=np.float32),
        )
        for k, b in zip(kernels, biases)
    )
    return VggWeights(layers=layers)


def _in_channels_for(widths: Sequence[int]) -> List[int]:
    return [3] + list(widths[:-1])


def random_base_weights(seed: int, widths: Sequence[int] = VGG19_PLAN) -> VggWeights:
    """
    He-initialised stand-in for pre-trained weights.

    Kernels ~ N(0, 2 / fan_in) with fan_in = in_channels * 9, biases 0.
    Draws come from derive_stream(seed, PURPOSE_BASE_WEIGHTS), layer by
    layer, in flat (out, in, kh, kw) order.
    """
    if len(widths) != NUM_LAYERS:
        raise ShapeMismatchError(f"Need {NUM_LAYERS} layer widths, got {len(widths)}")

    stream = derive_stream(seed, PURPOSE_BASE_WEIGHTS)
    kernels, biases = [], []
    for out_ch, in_ch in zip(widths, _in_channels_for(widths)):
        std = float(np.sqrt(2.0 / (in_ch * 9)))
        n = out_ch * in_ch * 9
        kernels.append(stream.gaussian_array(n, 0.0, std).reshape(out_ch, in_ch, 3, 3))
        biases.append(np.zeros(out_ch))
    return make_weights(kernels, biases)


def layer_variance(kernel: np.ndarray) -> float:
    """Unbiased sample variance of a layer's weights; 0 when n < 2."""
    flat = kernel.astype(np.float64).ravel()
    if flat.size < 2:
        return 0.0
    return float(np.var(flat, ddof=1))


def randomize_weights(
    base: VggWeights,
    alpha: Sequence[float],
    seed: int,
    k: int,
) -> VggWeights:
    """
    W_i^k = W_i^0 + alpha_i * X_i^k with X_i^k ~ N(0, Var(W_i^0)) i.i.d.

    Biases are left untouched. Deviates come from
    derive_stream(seed, k, PURPOSE_RANDOMIZE), consumed in layer order then
    flat weight order; a layer with alpha_i = 0 still consumes its draws so
    later layers see the same deviates whatever alpha is.
    """
    if k < 1:
        raise ValueError(f"Randomization index k must be >= 1, got {k}")
    if len(alpha) != NUM_LAYERS:
        raise ValueError(f"alpha needs {NUM_LAYERS} entries, got {len(alpha)}")
    if any(a < 0 for a in alpha):
        raise ValueError(f"alpha entries must be >= 0, got {list(alpha)}")

    stream = derive_stream(seed, k, PURPOSE_RANDOMIZE)
    kernels, biases = [], []
    for a, layer in zip(alpha, base.layers):
        std = float(np.sqrt(layer_variance(layer.kernel)))
        noise = stream.gaussian_array(layer.kernel.size, 0.0, std)
        if a == 0.0:
            kernels.append(layer.kernel.copy())
        else:
            perturbed = layer.kernel.astype(np.float64) + a * noise.reshape(layer.kernel.shape)
            kernels.append(perturbed)
        biases.append(layer.bias.copy())
    return make_weights(kernels, biases)


# ---------- Primitives ----------


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """
    3x3 convolution, stride 1, zero padding 1.

    out[o, y, x] = bias[o] + sum_{c,dy,dx} in[c, y+dy-1, x+dx-1] * k[o, c, dy, dx]
    """
    if x.ndim != 3:
        raise ShapeMismatchError(f"conv2d input must be C x H x W, got {x.shape}")
    c_in, h, w = x.shape
    if kernel.ndim != 4 or kernel.shape[1] != c_in or kernel.shape[2:] != (3, 3):
        raise ShapeMismatchError(
            f"Kernel {kernel.shape} does not fit input with {c_in} channels"
        )
    if bias.shape != (kernel.shape[0],):
        raise ShapeMismatchError(f"Bias {bias.shape} does not fit kernel {kernel.shape}")

    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    # (C, H, W, 3, 3) -> (H*W, C*9) in channel-major, kernel row-major order
    patches = sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = patches.transpose(1, 2, 0, 3, 4).reshape(h * w, c_in * 9)
    out = kernel.reshape(kernel.shape[0], c_in * 9) @ cols.T
    out += bias[:, None]
    return out.reshape(kernel.shape[0], h, w)


def conv2d_input_grad(grad_out: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gradient of a padded 3x3 conv w.r.t. its input: full conv with flipped kernel."""
    flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    zeros = np.zeros(flipped.shape[0], dtype=grad_out.dtype)
    return conv2d(grad_out, flipped, zeros)


def pool2x2(x: np.ndarray, mode: PoolingMode) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    2x2 stride-2 pooling; an odd trailing row/column is dropped.

    Max mode also returns the argmax map (C x H/2 x W/2, values 0..3 in
    row-major window order, first maximum wins).
    """
    c, h, w = x.shape
    if h < 2 or w < 2:
        raise ShapeMismatchError(f"Pooling needs H, W >= 2, got {h} x {w}")
    h2, w2 = h // 2, w // 2
    windows = (
        x[:, : 2 * h2, : 2 * w2]
        .reshape(c, h2, 2, w2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h2, w2, 4)
    )
    if PoolingMode(mode) is PoolingMode.MAX:
        argmax = np.argmax(windows, axis=3)
        out = np.take_along_axis(windows, argmax[..., None], axis=3)[..., 0]
        return out, argmax.astype(np.int8)
    return windows.mean(axis=3), None


def pool2x2_backward(
    grad_out: np.ndarray,
    input_shape: Tuple[int, int, int],
    mode: PoolingMode,
    argmax: Optional[np.ndarray],
) -> np.ndarray:
    c, h, w = input_shape
    h2, w2 = h // 2, w // 2
    if grad_out.shape != (c, h2, w2):
        raise ShapeMismatchError(
            f"Pool gradient {grad_out.shape} does not match output ({c}, {h2}, {w2})"
        )

    if PoolingMode(mode) is PoolingMode.MAX:
        if argmax is None:
            raise CacheMismatchError("Max-pool backward needs the argmax map")
        windows = np.zeros((c, h2, w2, 4), dtype=grad_out.dtype)
        np.put_along_axis(windows, argmax[..., None].astype(np.int64), grad_out[..., None], axis=3)
    else:
        windows = np.repeat(grad_out[..., None] / 4.0, 4, axis=3)

    grad_in = np.zeros((c, h, w), dtype=grad_out.dtype)
    grad_in[:, : 2 * h2, : 2 * w2] = (
        windows.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)
    )
    return grad_in


# ---------- Forward / backward ----------


@dataclass(frozen=True)
class ActivationCache:
    """
    Everything one forward pass keeps for the input-gradient backward pass.

    pre[i] / post[i]: conv output and ReLU output of layer i + 1.
    pools[s] / argmax[s]: output and argmax map of pooling stage s + 1.
    """

    input_shape: Tuple[int, int, int]
    mode: PoolingMode
    plan: Tuple[int, ...]
    weights: VggWeights = field(repr=False, compare=False)  # the exact object the pass ran with
    pre: Tuple[np.ndarray, ...]
    post: Tuple[np.ndarray, ...]
    pools: Tuple[np.ndarray, ...]
    argmax: Tuple[Optional[np.ndarray], ...]

    def conv_output(self, layer_index: int) -> np.ndarray:
        """Pre-activation output of 1-based conv layer `layer_index`."""
        return self.pre[layer_index - 1]


ImageLike = Union[Image, np.ndarray]


def _as_network_input(image: ImageLike) -> np.ndarray:
    """Image -> float32 C x H x W; arrays are taken as C x H x W as they are."""
    if isinstance(image, Image):
        return image.to_chw(np.float32)
    arr = np.asarray(image)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


def forward(weights: VggWeights, image: ImageLike, mode: PoolingMode = PoolingMode.MAX) -> ActivationCache:
    """
    Run conv -> ReLU for all 16 layers, pooling after 2, 4, 8, 12, 16.

    The compute dtype follows the input array (float32 for Image input,
    float64 arrays stay float64 for gradient verification).
    """
    mode = PoolingMode(mode)
    x = _as_network_input(image)
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeMismatchError(f"Network input must be 3 x H x W, got {x.shape}")
    if min(x.shape[1], x.shape[2]) < MIN_INPUT_SIZE:
        raise ImageTooSmallError(
            f"Image {x.shape[1]} x {x.shape[2]} is below the {MIN_INPUT_SIZE}-pixel "
            "minimum needed for five pooling stages"
        )

    input_shape = tuple(int(s) for s in x.shape)
    pre: List[np.ndarray] = []
    post: List[np.ndarray] = []
    pools: List[np.ndarray] = []
    argmaxes: List[Optional[np.ndarray]] = []

    for index, (kernel, bias) in enumerate(weights.cast(x.dtype), start=1):
        z = conv2d(x, kernel, bias)
        a = np.maximum(z, 0)
        pre.append(z)
        post.append(a)
        if index in POOL_AFTER:
            x, am = pool2x2(a, mode)
            pools.append(x)
            argmaxes.append(am)
        else:
            x = a

    return ActivationCache(
        input_shape=input_shape,
        mode=mode,
        plan=weights.plan,
        weights=weights,
        pre=tuple(pre),
        post=tuple(post),
        pools=tuple(pools),
        argmax=tuple(argmaxes),
    )


def backward_to_input(
    weights: VggWeights,
    cache: ActivationCache,
    content_grad: Optional[np.ndarray],
    style_grads: Sequence[Optional[np.ndarray]],
    mode: PoolingMode = PoolingMode.MAX,
    content_layer: ContentLayer = ContentLayer.CONV5_4,
) -> np.ndarray:
    """
    Reverse-mode gradient of <content_grad, pre[content_layer]> +
    sum_s <style_grads[s], pools[s]> with respect to the input pixels.

    Any seed may be None (treated as zero). Returns 3 x H x W.
    """
    mode = PoolingMode(mode)
    content_layer = ContentLayer(content_layer)

    if cache.mode is not mode:
        raise CacheMismatchError(f"Cache was built with {cache.mode.value} pooling, not {mode.value}")
    if cache.plan != weights.plan or cache.weights is not weights:
        raise CacheMismatchError("Activation cache was produced by different weights")
    if len(style_grads) != len(POOL_AFTER):
        raise ShapeMismatchError(f"Need {len(POOL_AFTER)} style seeds, got {len(style_grads)}")

    content_index = content_layer.index
    if content_grad is not None and content_grad.shape != cache.conv_output(content_index).shape:
        raise ShapeMismatchError(
            f"Content seed {content_grad.shape} does not match "
            f"{cache.conv_output(content_index).shape}"
        )
    for stage, seed in enumerate(style_grads):
        if seed is not None and seed.shape != cache.pools[stage].shape:
            raise ShapeMismatchError(
                f"Style seed {stage + 1} {seed.shape} does not match {cache.pools[stage].shape}"
            )

    dtype = cache.pre[0].dtype
    params = weights.cast(dtype)
    grad: Optional[np.ndarray] = None  # w.r.t. the output of the current layer block

    for index in range(NUM_LAYERS, 0, -1):
        if index in POOL_AFTER:
            stage = POOL_AFTER.index(index)
            seed = style_grads[stage]
            if seed is not None:
                seed = seed.astype(dtype, copy=False)
                grad = seed if grad is None else grad + seed
            if grad is not None:
                grad = pool2x2_backward(grad, cache.post[index - 1].shape, mode, cache.argmax[stage])

        if grad is not None:
            grad = grad * (cache.pre[index - 1] > 0)

        if index == content_index and content_grad is not None:
            seed = content_grad.astype(dtype, copy=False)
            grad = seed if grad is None else grad + seed

        if grad is not None:
            grad = conv2d_input_grad(grad, params[index - 1][0])

    if grad is None:
        return np.zeros(cache.input_shape, dtype=dtype)
    return grad
