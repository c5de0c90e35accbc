"""Image and mask containers with PNG I/O.

Pixels are kept as float64 in [0, 1] end to end; quantization to 8 bits
happens only when encoding to PNG. Both containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError


class DecodeError(ValueError):
    """Raised when a byte stream cannot be decoded as a PNG."""


@dataclass(frozen=True)
class Image:
    """An H x W x 3 image with channel intensities in [0, 1], RGB order."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected HxWx3 pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("channel values must lie in [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class Mask:
    """An H x W boolean map; True marks pixels the attack may alter."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError(f"expected HxW boolean array, got shape {bits.shape}")
        bits = bits.copy()
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def full(cls, height: int, width: int) -> "Mask":
        """All-true mask: the whole image is attackable."""
        return cls(np.ones((height, width), dtype=bool))


def _open_png(data: bytes) -> PILImage.Image:
    try:
        img = PILImage.open(io.BytesIO(data), formats=["PNG"])
        img.load()
        return img
    except UnidentifiedImageError as exc:
        raise DecodeError(f"not a valid PNG stream: {exc}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"corrupt PNG stream: {exc}") from exc


def decode_image(data: bytes) -> Image:
    """Decode a PNG byte stream into an Image.

    Channel values are scaled to [0, 1]; an alpha channel is discarded.
    Grayscale and palette inputs are promoted to RGB. 16-bit inputs are
    read at 8-bit precision.
    """
    img = _open_png(data)
    if img.mode != "RGB":
        img = img.convert("RGB")
    return Image(np.asarray(img, dtype=np.float64) / 255.0)


def encode_image(img: Image) -> bytes:
    """Encode an Image as an 8-bit RGB PNG.

    Round-tripping through decode_image reproduces the pixels up to the
    8-bit quantization bound of 1/510 per channel.
    """
    quantized = np.rint(img.pixels * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_image(data: bytes, threshold: float) -> Mask:
    """Build a mask from a grayscale or RGB PNG.

    A bit is True where the pixel luminance (mean of channels) is at least
    `threshold`, with both on the [0, 1] scale.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    img = _open_png(data)
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        lum = np.asarray(img, dtype=np.float64) / 65535.0
    else:
        if img.mode != "RGB":
            img = img.convert("RGB")
        lum = np.asarray(img, dtype=np.float64).mean(axis=2) / 255.0
    return Mask(lum >= threshold)
