"""Batch evaluation and dataset generation.

Covers the attack success rate metric, re-scoring a fixed adversarial image
set through other oracles, misclassification histograms, and bulk stamping
of fixed-color beam groups onto clean images for robustness training sets.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .attack import AttackResult, result_to_dict
from .beam import BeamGroup, Color, ParamBounds, beam_to_dict, render, sample_beam
from .imaging import Image, decode_image, encode_image
from .oracle import Oracle, top1


class UndefinedMetricError(ValueError):
    """Metric has an empty denominator (no clean-correct samples)."""


class LabelMappingError(KeyError):
    """A class name cannot be matched between oracle vocabularies."""


@dataclass(frozen=True)
class EvalRecord:
    """Outcome of one sample: clean check plus post-attack prediction."""

    sample_id: str
    true_label: int
    clean_correct: bool
    attack: AttackResult | None
    predicted_label: int

    @property
    def attack_succeeded(self) -> bool:
        return self.clean_correct and self.predicted_label != self.true_label


def record_to_dict(record: EvalRecord) -> dict:
    d = {
        "sample_id": record.sample_id,
        "true_label": record.true_label,
        "clean_correct": record.clean_correct,
        "predicted_label": record.predicted_label,
    }
    if record.attack is not None:
        d["attack"] = result_to_dict(record.attack)
    return d


def record_from_dict(d: Mapping) -> EvalRecord:
    return EvalRecord(
        sample_id=str(d["sample_id"]),
        true_label=int(d["true_label"]),
        clean_correct=bool(d["clean_correct"]),
        attack=None,
        predicted_label=int(d["predicted_label"]),
    )


def compute_asr(records: Sequence[EvalRecord]) -> float:
    """Attack success rate over the clean-correct records.

    ASR = 1 - (post-attack still-correct count) / O, where O counts records
    whose clean image was classified correctly; other records are excluded.
    """
    clean_correct = [r for r in records if r.clean_correct]
    if not clean_correct:
        raise UndefinedMetricError("no correctly classified clean samples")
    still_correct = sum(1 for r in clean_correct if r.predicted_label == r.true_label)
    return 1.0 - still_correct / len(clean_correct)


def misclass_histogram(records: Sequence[EvalRecord]) -> dict[int, int]:
    """Predicted-label counts over successful attacks, sorted by count
    descending (ties by label ascending)."""
    counts = Counter(r.predicted_label for r in records if r.attack_succeeded)
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def transfer_matrix(
    adversarial_images: Sequence[Image],
    true_labels: Sequence[str],
    oracles: Sequence[Oracle],
    aliases: Mapping[str, str] | None = None,
) -> list[float]:
    """ASR of a fixed adversarial image set re-scored through each oracle.

    No new search happens; entry j is the fraction of images oracle j no
    longer assigns their true label. Class names are matched by string
    equality after applying the optional alias table.
    """
    if len(adversarial_images) != len(true_labels):
        raise ValueError("one true label per image required")
    aliases = dict(aliases or {})

    def canon(name: str) -> str:
        return aliases.get(name, name)

    matrix = []
    for oracle in oracles:
        still_correct = 0
        for img, true_name in zip(adversarial_images, true_labels):
            scores = oracle.predict(img)
            vocab = {canon(name) for name in scores.labels}
            if canon(true_name) not in vocab:
                raise LabelMappingError(
                    f"label {true_name!r} not in oracle vocabulary ({oracle.backend})"
                )
            predicted = canon(scores.labels[top1(scores)])
            if predicted == canon(true_name):
                still_correct += 1
        matrix.append(1.0 - still_correct / len(adversarial_images))
    return matrix


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for stamping fixed-parameter beam groups onto clean images.

    Every (image, color) pair yields one output: beams_per_image beams of
    that single color with the given intensity and radius at seeded-random
    positions. images_per_class only feeds planning arithmetic.
    """

    colors: tuple[Color, ...]
    beams_per_image: int = 20
    intensity: float = 0.7
    radius: float = 20.0
    seed: int = 0
    images_per_class: int | None = None

    def __post_init__(self) -> None:
        if not self.colors:
            raise ValueError("colors must be nonempty")
        if self.beams_per_image < 1:
            raise ValueError("beams_per_image must be >= 1")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError("intensity must lie in [0, 1]")
        if self.radius <= 0.0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "colors", tuple(tuple(c) for c in self.colors))

    def planned_output_count(self, num_images: int) -> int:
        """Output cardinality for a given source-image count."""
        return num_images * len(self.colors)

    def planned_output_count_per_class(self, num_classes: int) -> int:
        """Planning arithmetic: images_per_class x classes x colors."""
        if self.images_per_class is None:
            raise ValueError("images_per_class is not set")
        return self.images_per_class * num_classes * len(self.colors)


def _stamp_one(
    spec: DatasetSpec,
    base: Image,
    color: Color,
    image_index: int,
    color_index: int,
) -> BeamGroup:
    bounds = ParamBounds(
        center_row=(0.0, float(base.height - 1)),
        center_col=(0.0, float(base.width - 1)),
        radius=(spec.radius, spec.radius),
        intensity=(spec.intensity, spec.intensity),
        palette=(color,),
    )
    rng = np.random.default_rng(
        np.random.SeedSequence((spec.seed, image_index, color_index))
    )
    beams = tuple(sample_beam(bounds, rng) for _ in range(spec.beams_per_image))
    return BeamGroup(beams)


def generate_dataset(
    spec: DatasetSpec,
    sources: Sequence[tuple[str, str]],
    out_dir: str,
    workers: int = 1,
) -> list[dict]:
    """Render every (source image, color) pair and write PNGs plus manifest.

    sources is a sequence of (sample_id, png_path). Unreadable sources are
    recorded as per-row errors and generation continues. The manifest
    (manifest.jsonl in out_dir) lists rows in input order and is
    byte-identical across reruns with the same spec and sources.
    """
    os.makedirs(out_dir, exist_ok=True)

    def build_row(job: tuple[int, int]) -> dict:
        i, j = job
        sample_id, path = sources[i]
        color = spec.colors[j]
        out_name = f"{sample_id}__c{j:02d}.png"
        row = {
            "id": f"{sample_id}__c{j:02d}",
            "source": path,
            "color": list(color),
        }
        try:
            with open(path, "rb") as fh:
                base = decode_image(fh.read())
            group = _stamp_one(spec, base, color, i, j)
            stamped = render(base, group)
            with open(os.path.join(out_dir, out_name), "wb") as fh:
                fh.write(encode_image(stamped))
        except Exception as exc:
            row["error"] = str(exc)
            return row
        row["beams"] = [beam_to_dict(b) for b in group]
        row["output"] = out_name
        return row

    jobs = [(i, j) for i in range(len(sources)) for j in range(len(spec.colors))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(build_row, jobs))
    else:
        rows = [build_row(job) for job in jobs]

    write_manifest(rows, os.path.join(out_dir, "manifest.jsonl"))
    return rows


def write_manifest(rows: Sequence[Mapping], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path: str) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
