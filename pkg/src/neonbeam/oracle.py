"""Black-box classifier oracles: one image in, one score vector out.

Backends: a deterministic built-in toy classifier for hermetic tests, an
ONNX model-file backend (OpenCV DNN engine), and an HTTP client speaking
the scoring protocol (POST /score with a PNG body). Every predict call
increments the query counter, including calls that fail in transport.
"""

from __future__ import annotations

import os
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import Image, encode_image

PROB_SUM_TOL = 1e-5


class TransportError(RuntimeError):
    """Backend I/O failure; the query is still counted as spent."""


class ProtocolError(RuntimeError):
    """Backend responded, but not with a valid score vector."""


@dataclass(frozen=True)
class ScoreVector:
    """Per-class probabilities with parallel class-name labels."""

    probs: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        labels = tuple(str(name) for name in self.labels)
        if probs.ndim != 1 or len(probs) < 2:
            raise ValueError("need a flat probability vector with >= 2 classes")
        if len(labels) != len(probs):
            raise ValueError(
                f"{len(labels)} labels for {len(probs)} probabilities"
            )
        if probs.min() < 0.0:
            raise ValueError("probabilities must be nonnegative")
        if abs(float(probs.sum()) - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()}, expected 1")
        probs = probs.copy()
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "labels", labels)


def confidence(scores: ScoreVector, label_index: int) -> float:
    """Probability assigned to one class; the attack's loss."""
    if not 0 <= label_index < len(scores.probs):
        raise IndexError(
            f"label index {label_index} out of range for {len(scores.probs)} classes"
        )
    return float(scores.probs[label_index])


def top1(scores: ScoreVector) -> int:
    """Index of the maximum probability; ties break to the lowest index."""
    return int(np.argmax(scores.probs))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


TOY_LABELS = ("red", "green", "blue")
TOY_TEMPERATURE = 10.0


def toy_predict(img: Image) -> ScoreVector:
    """Deterministic 3-class stand-in classifier.

    logit_c = 10 * mean of channel c over all pixels; probabilities are the
    softmax of the logits over classes (red, green, blue).
    """
    logits = TOY_TEMPERATURE * img.pixels.mean(axis=(0, 1))
    return ScoreVector(softmax(logits), TOY_LABELS)


class Oracle(ABC):
    """A black-box classifier handle with exact query accounting.

    The counter increments once per predict call regardless of outcome;
    updates are atomic, and predict may be called from concurrent workers.
    """

    backend: str = "abstract"

    def __init__(self) -> None:
        self._queries = 0
        self._lock = threading.Lock()

    @property
    def query_count(self) -> int:
        with self._lock:
            return self._queries

    def predict(self, img: Image) -> ScoreVector:
        with self._lock:
            self._queries += 1
        return self._score(img)

    @abstractmethod
    def _score(self, img: Image) -> ScoreVector:
        ...

    @property
    def labels(self) -> tuple[str, ...] | None:
        """Class names when known up front; None for backends that only
        learn them from a live response."""
        return None


class ToyOracle(Oracle):
    backend = "toy"

    def _score(self, img: Image) -> ScoreVector:
        return toy_predict(img)

    @property
    def labels(self) -> tuple[str, ...]:
        return TOY_LABELS


def _as_probs(raw: np.ndarray) -> np.ndarray:
    """Pass probabilities through; apply softmax when the output looks like
    raw logits (negative entries or sum away from 1)."""
    raw = np.asarray(raw, dtype=np.float64).ravel()
    if raw.min() >= 0.0 and abs(float(raw.sum()) - 1.0) <= 1e-3:
        return raw / raw.sum()
    return softmax(raw)


class OnnxOracle(Oracle):
    """Scores through an ONNX model file via the OpenCV DNN engine.

    The oracle owns preprocessing: optional bilinear resize to `input_size`
    and per-channel (x - mean) / std normalization of [0, 1] pixels, fed as
    an NCHW float32 tensor. Defaults match common ImageNet-trained models.
    """

    backend = "onnx"

    IMAGENET_MEAN = (0.485, 0.456, 0.406)
    IMAGENET_STD = (0.229, 0.224, 0.225)

    def __init__(
        self,
        model_path: str,
        labels: Sequence[str] | None = None,
        input_size: tuple[int, int] | None = (224, 224),
        mean: Sequence[float] = IMAGENET_MEAN,
        std: Sequence[float] = IMAGENET_STD,
    ) -> None:
        super().__init__()
        try:
            import cv2
        except ImportError as exc:  # pragma: no cover
            raise ImportError(
                "the ONNX backend needs opencv-python-headless "
                "(pip install neonbeam[onnx])"
            ) from exc
        self._cv2 = cv2
        self._net = cv2.dnn.readNetFromONNX(model_path)
        self._net_lock = threading.Lock()
        self._input_size = input_size
        self._mean = np.asarray(mean, dtype=np.float64).reshape(1, 1, 3)
        self._std = np.asarray(std, dtype=np.float64).reshape(1, 1, 3)
        self._labels = tuple(labels) if labels is not None else None

    def _score(self, img: Image) -> ScoreVector:
        px = img.pixels
        if self._input_size is not None and (img.height, img.width) != self._input_size:
            h, w = self._input_size
            px = self._cv2.resize(px, (w, h), interpolation=self._cv2.INTER_LINEAR)
            px = np.clip(px, 0.0, 1.0)
        px = (px - self._mean) / self._std
        blob = px.transpose(2, 0, 1)[None].astype(np.float32)
        with self._net_lock:  # cv2 Net objects are not reentrant
            self._net.setInput(blob)
            raw = self._net.forward()
        probs = _as_probs(raw)
        labels = self._labels or tuple(f"class_{i}" for i in range(len(probs)))
        if len(labels) != len(probs):
            raise ProtocolError(
                f"{len(labels)} labels supplied for a {len(probs)}-class model"
            )
        return ScoreVector(probs, labels)

    @property
    def labels(self) -> tuple[str, ...] | None:
        return self._labels


def http_timeout_seconds() -> float:
    """Timeout for the HTTP backend, from NEONBEAM_HTTP_TIMEOUT_MS."""
    raw = os.environ.get("NEONBEAM_HTTP_TIMEOUT_MS", "30000")
    try:
        ms = float(raw)
    except ValueError as exc:
        raise ValueError(f"NEONBEAM_HTTP_TIMEOUT_MS={raw!r} is not a number") from exc
    return ms / 1000.0


class HttpOracle(Oracle):
    """Client for a remote scoring service.

    Protocol: POST {base_url}/score with a binary PNG body and
    Content-Type: image/png; the response is JSON
    {"probs": [...], "labels": [...]} with probabilities summing to 1.
    """

    backend = "http"

    def __init__(self, base_url: str) -> None:
        super().__init__()
        self._url = base_url.rstrip("/") + "/score"

    def _score(self, img: Image) -> ScoreVector:
        import requests

        try:
            resp = requests.post(
                self._url,
                data=encode_image(img),
                headers={"Content-Type": "image/png"},
                timeout=http_timeout_seconds(),
            )
        except requests.RequestException as exc:
            raise TransportError(f"scoring request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(
                f"scoring service returned status {resp.status_code}: {resp.text[:200]}"
            )
        try:
            payload = resp.json()
            probs = payload["probs"]
            labels = payload["labels"]
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed scoring response: {exc}") from exc
        try:
            return ScoreVector(np.asarray(probs, dtype=np.float64), tuple(labels))
        except ValueError as exc:
            raise ProtocolError(f"invalid score vector from service: {exc}") from exc
