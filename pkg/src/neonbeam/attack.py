"""Greedy per-beam random search driving the classifier's confidence down.

The search places up to N beams. For each beam slot it draws t_max random
candidates, scores every candidate as (accepted beams + candidate) rendered
fresh onto the clean base image, and accepts the best candidate only when it
strictly improves the running best confidence on the true label. The attack
stops early as soon as an accepted beam flips the predicted class.

Scoring runs either on plain predictions or, in robust mode, on the mean
confidence over k randomly transformed copies of the rendered scene
(brightness, pixel offset, color jitter).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .beam import (
    DEFAULT_PROFILE,
    PROFILES,
    BeamGroup,
    NeonBeam,
    ParamBounds,
    beam_to_dict,
    render,
    sample_beam,
)
from .imaging import Image, Mask
from .oracle import Oracle, ScoreVector, confidence, top1


class CleanMisclassifiedError(ValueError):
    """The oracle already misclassifies the clean image; nothing to attack."""

    def __init__(self, expected: int, scores: ScoreVector) -> None:
        self.expected = expected
        self.scores = scores
        self.predicted = top1(scores)
        super().__init__(
            f"clean image predicted as class {self.predicted}, expected {expected}"
        )


class AttackAborted(RuntimeError):
    """An oracle error interrupted the search; partial progress attached."""

    def __init__(self, cause: Exception, group: BeamGroup, trace: tuple[float, ...],
                 queries: int) -> None:
        self.cause = cause
        self.group = group
        self.trace = trace
        self.queries = queries
        super().__init__(f"attack aborted after {queries} queries: {cause}")


@dataclass(frozen=True)
class EotConfig:
    """Transform distribution for robust scoring.

    Intervals must admit the identity transform: brightness and color jitter
    ranges contain 1.0, the per-axis pixel offset range contains 0.
    """

    samples: int = 10
    brightness_range: tuple[float, float] = (0.9, 1.1)
    offset_range: tuple[int, int] = (-2, 2)
    color_jitter: tuple[float, float] = (0.95, 1.05)

    def __post_init__(self) -> None:
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        lo, hi = self.brightness_range
        if not lo <= 1.0 <= hi:
            raise ValueError("brightness_range must contain 1.0")
        lo, hi = self.offset_range
        if not lo <= 0 <= hi:
            raise ValueError("offset_range must contain 0")
        lo, hi = self.color_jitter
        if not lo <= 1.0 <= hi:
            raise ValueError("color_jitter must contain 1.0")


@dataclass(frozen=True)
class Transform:
    """One sampled deployment transform."""

    brightness: float
    offset: tuple[int, int]  # (rows, cols), positive shifts content down/right
    jitter: tuple[float, float, float]


def sample_transform(cfg: EotConfig, rng: np.random.Generator) -> Transform:
    """Draw one transform; consumes brightness, row/col offset, then jitter."""
    brightness = float(rng.uniform(*cfg.brightness_range))
    dy = int(rng.integers(cfg.offset_range[0], cfg.offset_range[1] + 1))
    dx = int(rng.integers(cfg.offset_range[0], cfg.offset_range[1] + 1))
    jitter = tuple(float(v) for v in rng.uniform(*cfg.color_jitter, size=3))
    return Transform(brightness, (dy, dx), jitter)  # type: ignore[arg-type]


def apply_transform(img: Image, t: Transform) -> Image:
    """Apply brightness, then offset with edge replication, then color jitter.

    Multiplicative steps clamp to [0, 1]. The identity transform
    (brightness 1, offset (0, 0), jitter 1) reproduces the input exactly.
    """
    px = img.pixels * t.brightness
    np.clip(px, 0.0, 1.0, out=px)
    dy, dx = t.offset
    if dy or dx:
        h, w = px.shape[:2]
        rows = np.clip(np.arange(h) - dy, 0, h - 1)
        cols = np.clip(np.arange(w) - dx, 0, w - 1)
        px = px[rows][:, cols]
    px = px * np.asarray(t.jitter, dtype=np.float64)
    np.clip(px, 0.0, 1.0, out=px)
    return Image(px)


def _transformed_scores(
    scene: Image,
    oracle: Oracle,
    cfg: EotConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Probability vectors of `scene` under cfg.samples random transforms,
    stacked (k, num_classes). Consumes exactly cfg.samples queries."""
    rows = []
    for _ in range(cfg.samples):
        t = sample_transform(cfg, rng)
        rows.append(oracle.predict(apply_transform(scene, t)).probs)
    return np.stack(rows)


def eot_confidence(
    base: Image,
    group: BeamGroup,
    mask: Mask | None,
    oracle: Oracle,
    label: int,
    cfg: EotConfig,
    rng: np.random.Generator,
    profile: str = DEFAULT_PROFILE,
) -> float:
    """Monte-Carlo estimate of the expected true-label confidence of the
    rendered scene under the transform distribution.

    Averages confidence over cfg.samples independently sampled transforms;
    consumes exactly cfg.samples oracle queries.
    """
    scene = render(base, group, mask, profile)
    stack = _transformed_scores(scene, oracle, cfg, rng)
    return float(stack[:, label].mean())


@dataclass(frozen=True)
class AttackConfig:
    """Search budget and parameter domain for one attack run.

    bounds=None derives default bounds from the target image dimensions.
    epsilon_report, when set, is echoed into reports next to the measured
    L2 pixel delta; it is never enforced. verify adds one re-query of the
    final adversarial image outside the search budget.
    """

    num_beams: int = 20
    max_steps: int = 50
    bounds: ParamBounds | None = None
    profile: str = DEFAULT_PROFILE
    seed: int = 0
    eot: EotConfig | None = None
    epsilon_report: float | None = None
    verify: bool = False

    def __post_init__(self) -> None:
        if self.num_beams < 1:
            raise ValueError("num_beams must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")


@dataclass(frozen=True)
class AttackResult:
    success: bool
    group: BeamGroup
    adversarial: Image
    queries: int
    trace: tuple[float, ...]
    final_prediction: int
    l2_delta: float
    verified_prediction: int | None = None

    def __post_init__(self) -> None:
        for prev, cur in zip(self.trace, self.trace[1:]):
            if cur >= prev:
                raise ValueError("trace must be strictly decreasing")


def result_to_dict(result: AttackResult) -> dict:
    """The JSON report schema; the adversarial PNG is written separately."""
    return {
        "success": result.success,
        "queries": result.queries,
        "l2_delta": result.l2_delta,
        "final_label": result.final_prediction,
        "trace": list(result.trace),
        "beams": [beam_to_dict(b) for b in result.group],
    }


def _map_candidates(fn: Callable, candidates: list, workers: int) -> list:
    if workers <= 1 or len(candidates) <= 1:
        return [fn(c) for c in candidates]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, candidates))


def run_attack(
    base: Image,
    label: int,
    mask: Mask | None,
    oracle: Oracle,
    cfg: AttackConfig,
    workers: int = 1,
) -> AttackResult:
    """Run the greedy beam search against a black-box oracle.

    Precondition: the oracle classifies `base` as `label`; the query spent
    on this check is counted. Per slot, all t_max candidates are evaluated
    (in parallel when workers > 1; the minimum-score, earliest-index
    reduction makes results independent of completion order) and the best
    is accepted only on strict improvement. Total queries never exceed
    1 + num_beams * max_steps, times cfg.eot.samples in robust mode.
    """
    bounds = cfg.bounds or ParamBounds.for_image(base.height, base.width)
    rng = np.random.default_rng(cfg.seed)
    start = oracle.query_count

    group = BeamGroup()
    trace: list[float] = []

    def abort(exc: Exception) -> AttackAborted:
        return AttackAborted(exc, group, tuple(trace), oracle.query_count - start)

    try:
        clean = oracle.predict(base)
    except Exception as exc:
        raise abort(exc) from exc
    if top1(clean) != label:
        raise CleanMisclassifiedError(label, clean)

    best_score = confidence(clean, label)
    final_prediction = label
    success = False

    for _slot in range(cfg.num_beams):
        candidates = [sample_beam(bounds, rng) for _ in range(cfg.max_steps)]
        if cfg.eot is not None:
            # Per-candidate transform seeds are drawn up front so results do
            # not depend on worker scheduling.
            eot_seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=cfg.max_steps)]

            def evaluate(item: tuple[NeonBeam, int]) -> tuple[float, int]:
                cand, seed = item
                scene = render(base, group.append(cand), mask, cfg.profile)
                stack = _transformed_scores(
                    scene, oracle, cfg.eot, np.random.default_rng(seed)
                )
                mean_probs = stack.mean(axis=0)
                return float(mean_probs[label]), int(np.argmax(mean_probs))

            jobs = list(zip(candidates, eot_seeds))
        else:

            def evaluate(cand: NeonBeam) -> tuple[float, int]:
                scores = oracle.predict(render(base, group.append(cand), mask, cfg.profile))
                return confidence(scores, label), top1(scores)

            jobs = candidates

        try:
            results = _map_candidates(evaluate, jobs, workers)
        except Exception as exc:
            raise abort(exc) from exc

        slot_scores = [score for score, _ in results]
        best_idx = int(np.argmin(slot_scores))  # earliest index wins ties
        slot_best, slot_top = results[best_idx]

        if slot_best < best_score:
            group = group.append(candidates[best_idx])
            best_score = slot_best
            trace.append(slot_best)
            final_prediction = slot_top
            if slot_top != label:
                success = True
                break

    queries = oracle.query_count - start
    adversarial = render(base, group, mask, cfg.profile)
    l2_delta = float(np.linalg.norm(adversarial.pixels - base.pixels))

    verified_prediction = None
    if cfg.verify:
        # One re-query outside the search budget, flagged in the result.
        verified_prediction = top1(oracle.predict(adversarial))

    return AttackResult(
        success=success,
        group=group,
        adversarial=adversarial,
        queries=queries,
        trace=tuple(trace),
        final_prediction=final_prediction,
        l2_delta=l2_delta,
        verified_prediction=verified_prediction,
    )
