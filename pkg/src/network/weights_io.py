# src/network/weights_io.py
"""
DHFFW1 weight file (little-endian, no padding, no checksum):

    b"DHFFW1\\n"                      7 bytes
    u32 layer_count                  must be 16
    per layer:
        u32 out_ch, u32 in_ch, u32 kh (3), u32 kw (3)
        f32 kernel[out_ch * in_ch * 3 * 3]   (out, in, kh, kw) row-major
        f32 bias[out_ch]
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from .vggnet import NUM_LAYERS, VGG19_PLAN, VggWeights, make_weights

MAGIC = b"DHFFW1\n"
_FAMILY = b"DHFFW"

PathLike = Union[str, Path]


class WeightsFormatError(ValueError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class ShapePlanError(WeightsFormatError):
    pass


class WeightsTruncatedError(WeightsFormatError):
    pass


def _expected_in_channels(index: int) -> int:
    return 3 if index == 0 else VGG19_PLAN[index - 1]


def encode_weights(weights: VggWeights) -> bytes:
    parts: List[bytes] = [MAGIC, struct.pack("<I", len(weights.layers))]
    for layer in weights.layers:
        out_ch, in_ch, kh, kw = layer.kernel.shape
        parts.append(struct.pack("<4I", out_ch, in_ch, kh, kw))
        parts.append(layer.kernel.astype("<f4").tobytes(order="C"))
        parts.append(layer.bias.astype("<f4").tobytes(order="C"))
    return b"".join(parts)


def decode_weights(raw: bytes) -> VggWeights:
    """
    Parse a DHFFW1 payload and check it against the VGG-19 channel plan.

    Raises:
        WeightsVersionError for another DHFFW revision,
        WeightsFormatError for a foreign file,
        ShapePlanError for a layer count or shape off the plan,
        WeightsTruncatedError when the payload ends early.
    """
    if not raw.startswith(MAGIC):
        if raw.startswith(_FAMILY):
            version = raw[: raw.find(b"\n")] if b"\n" in raw[:16] else raw[:8]
            raise WeightsVersionError(
                f"Unsupported weight file version {version!r}; expected {MAGIC[:-1]!r}"
            )
        raise WeightsFormatError("Not a DHFFW1 weight file (bad magic)")

    pos = len(MAGIC)

    def read(n: int, what: str) -> bytes:
        nonlocal pos
        chunk = raw[pos:pos + n]
        if len(chunk) < n:
            raise WeightsTruncatedError(
                f"Weight file truncated while reading {what}: "
                f"needed {n} bytes at offset {pos}, got {len(chunk)}"
            )
        pos += n
        return chunk

    (layer_count,) = struct.unpack("<I", read(4, "layer count"))
    if layer_count != NUM_LAYERS:
        raise ShapePlanError(
            f"Weight file has {layer_count} layer records; the VGG-19 plan needs {NUM_LAYERS}"
        )

    kernels, biases = [], []
    for index in range(NUM_LAYERS):
        out_ch, in_ch, kh, kw = struct.unpack("<4I", read(16, f"layer {index + 1} header"))
        expected = (VGG19_PLAN[index], _expected_in_channels(index), 3, 3)
        if (out_ch, in_ch, kh, kw) != expected:
            raise ShapePlanError(
                f"Layer {index + 1} shape {(out_ch, in_ch, kh, kw)} is off the plan {expected}"
            )
        n = out_ch * in_ch * kh * kw
        kernel = np.frombuffer(read(4 * n, f"layer {index + 1} kernel"), dtype="<f4")
        bias = np.frombuffer(read(4 * out_ch, f"layer {index + 1} bias"), dtype="<f4")
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(bias))):
            raise WeightsFormatError(f"Layer {index + 1} contains non-finite values")
        kernels.append(kernel.reshape(out_ch, in_ch, kh, kw))
        biases.append(bias)

    return make_weights(kernels, biases)


def load_weights(path: PathLike) -> VggWeights:
    return decode_weights(Path(path).read_bytes())


def save_weights(weights: VggWeights, path: PathLike) -> None:
    Path(path).write_bytes(encode_weights(weights))
