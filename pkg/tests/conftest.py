from __future__ import annotations

import io
import os

import numpy as np
import pytest
from PIL import Image as PILImage

from neonbeam import Image

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def png_bytes(array_u8: np.ndarray, mode: str = "RGB") -> bytes:
    """Encode a uint8 array as PNG via PIL, bypassing the package encoder."""
    buf = io.BytesIO()
    PILImage.fromarray(array_u8, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def solid_image(height: int, width: int, color) -> Image:
    return Image(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)))


def random_image(rng: np.random.Generator, height: int, width: int) -> Image:
    return Image(rng.random((height, width, 3)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
