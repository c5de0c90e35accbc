"""Model backends served over the scoring protocol.

Each backend owns its full preprocessing chain and returns a probability
vector plus its label vocabulary, so clients stay strictly black-box. The
stub backend needs no ML runtime and exists for protocol conformance tests;
the torchvision backend wraps ImageNet classifiers.
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError


class ImageDecodeError(ValueError):
    """Request body is not a decodable PNG."""


def decode_png(data: bytes) -> np.ndarray:
    """PNG bytes to an HxWx3 float array in [0, 1], alpha discarded."""
    try:
        img = PILImage.open(io.BytesIO(data), formats=["PNG"])
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode PNG body: {exc}") from exc
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64).ravel()
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@dataclass
class ServedModel:
    """One classifier behind the wire protocol.

    score maps a decoded [0, 1] RGB array to a probability vector whose
    length equals the label vocabulary; calls are serialized internally so
    concurrent requests are safe regardless of the backend.
    """

    name: str
    labels: tuple[str, ...]
    preprocessing: str
    score_fn: Callable[[np.ndarray], np.ndarray]
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self) -> None:
        if len(self.labels) < 2:
            raise ValueError("a served model needs at least 2 classes")

    @property
    def num_classes(self) -> int:
        return len(self.labels)

    def score(self, pixels: np.ndarray) -> np.ndarray:
        with self._lock:
            probs = np.asarray(self.score_fn(pixels), dtype=np.float64).ravel()
        if len(probs) != self.num_classes:
            raise RuntimeError(
                f"model produced {len(probs)} scores for {self.num_classes} labels"
            )
        return probs


def stub3_model() -> ServedModel:
    """Identity-logit 3-class stub: logits are the channel means."""

    def score_fn(pixels: np.ndarray) -> np.ndarray:
        return softmax(pixels.mean(axis=(0, 1)))

    return ServedModel(
        name="stub3",
        labels=("class_0", "class_1", "class_2"),
        preprocessing="none (channel means of the [0,1] image)",
        score_fn=score_fn,
    )


def torchvision_model(arch: str) -> ServedModel:
    """Wrap a pretrained torchvision classifier with its own eval transform."""
    try:
        import torch
        from torchvision import models as tvm
    except ImportError as exc:  # pragma: no cover
        raise ImportError(
            "torchvision backend needs the torch extra "
            "(pip install neonbeam-shim[torch])"
        ) from exc

    weights_enum = tvm.get_model_weights(arch)
    weights = weights_enum.DEFAULT
    model = tvm.get_model(arch, weights=weights)
    model.eval()
    transform = weights.transforms()
    labels = tuple(weights.meta["categories"])

    def score_fn(pixels: np.ndarray) -> np.ndarray:
        tensor = torch.from_numpy(pixels.transpose(2, 0, 1)).float()
        with torch.inference_mode():
            logits = model(transform(tensor).unsqueeze(0))[0]
        return softmax(logits.numpy())

    return ServedModel(
        name=arch,
        labels=labels,
        preprocessing=str(transform),
        score_fn=score_fn,
    )


def load_model(spec: str) -> ServedModel:
    """Resolve a model spec: 'stub3' or 'torchvision:<arch>'."""
    if spec == "stub3":
        return stub3_model()
    if spec.startswith("torchvision:"):
        return torchvision_model(spec.split(":", 1)[1])
    raise ValueError(f"unknown model spec {spec!r}; use stub3 or torchvision:<arch>")
