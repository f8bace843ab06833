# src/imaging/pnm.py
"""
Binary PGM (P5) / PPM (P6) codec, maxval 255 only.

Header: magic, width, height, maxval as whitespace-separated tokens
('#' comments allowed between tokens), then exactly one whitespace byte,
then the raw 8-bit payload in row-major, channel-interleaved order.
"""

from __future__ import annotations

from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from .image import Image

PathLike = Union[str, Path]

_MAGIC_CHANNELS = {b"P5": 1, b"P6": 3}
_WHITESPACE = b" \t\n\r\v\f"


class PnmError(ValueError):
    """Base class for PNM parse errors."""


class PnmMagicError(PnmError):
    pass


class PnmHeaderError(PnmError):
    pass


class PnmMaxvalError(PnmError):
    pass


class PnmTruncatedError(PnmError):
    pass


def _read_header_tokens(raw: bytes, count: int) -> Tuple[List[bytes], int]:
    """
    Read `count` header tokens; return them and the offset just past the
    single whitespace byte that ends the last token.
    """
    tokens: List[bytes] = []
    pos = 0
    n = len(raw)

    while len(tokens) < count:
        while pos < n and raw[pos] in _WHITESPACE:
            pos += 1
        if pos < n and raw[pos] == ord("#"):
            while pos < n and raw[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise PnmHeaderError(
                f"PNM header ended after {len(tokens)} of {count} tokens"
            )
        start = pos
        while pos < n and raw[pos] not in _WHITESPACE:
            pos += 1
        tokens.append(raw[start:pos])

    if pos >= n:
        raise PnmHeaderError("PNM header is not followed by a payload separator")
    # exactly one whitespace byte separates maxval from the payload
    return tokens, pos + 1


def _parse_int(token: bytes, name: str) -> int:
    if not token.isdigit():
        raise PnmHeaderError(f"PNM {name} is not a positive integer: {token!r}")
    value = int(token)
    if value < 1:
        raise PnmHeaderError(f"PNM {name} must be >= 1, got {value}")
    return value


def decode_pnm(raw: bytes) -> Image:
    """Decode P5/P6 bytes into an Image (byte / 255.0)."""
    magic = raw[:2]
    if magic not in _MAGIC_CHANNELS:
        raise PnmMagicError(f"Unsupported PNM magic {magic!r}; expected P5 or P6")
    channels = _MAGIC_CHANNELS[magic]

    tokens, offset = _read_header_tokens(raw[2:], 3)
    offset += 2
    width = _parse_int(tokens[0], "width")
    height = _parse_int(tokens[1], "height")
    maxval = _parse_int(tokens[2], "maxval")
    if maxval != 255:
        raise PnmMaxvalError(f"PNM maxval must be 255, got {maxval}")

    expected = width * height * channels
    payload = raw[offset:offset + expected]
    if len(payload) < expected:
        raise PnmTruncatedError(
            f"PNM payload truncated: expected {expected} bytes, got {len(payload)}"
        )

    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Image.from_array(pixels.astype(np.float64) / 255.0)


def quantize(img: Image) -> np.ndarray:
    """value * 255 rounded half away from zero, as uint8."""
    return np.floor(img.data * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(img: Image) -> bytes:
    magic = "P6" if img.channels == 3 else "P5"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + quantize(img).tobytes()


def load_pnm(path: PathLike) -> Image:
    """
    Load a binary PGM/PPM file.

    Raises:
        FileNotFoundError / OSError on I/O failure,
        PnmMagicError, PnmHeaderError, PnmMaxvalError, PnmTruncatedError
        on malformed content.
    """
    raw = Path(path).read_bytes()
    return decode_pnm(raw)


def save_pnm(img: Image, path: PathLike) -> None:
    """Write P5 for 1-channel images, P6 for 3-channel images."""
    Path(path).write_bytes(encode_pnm(img))
