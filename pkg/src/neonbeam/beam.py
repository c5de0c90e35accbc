"""Circular light-beam perturbations: parameter domain, sampling, rendering.

A beam is a disk of colored light described by a center (fractional pixel
coordinates allowed), a radius in pixels, a peak intensity in [0, 1] and an
RGB color. Rendering blends each beam over the base image with a per-pixel
opacity derived from the beam's spatial profile, restricted to a mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .imaging import Image, Mask

Color = tuple[float, float, float]

PROFILES = ("hard", "quadratic")
DEFAULT_PROFILE = "quadratic"

# The five lamp colors commonly available in hardware, normalized to [0, 1].
NEON5_PALETTE: tuple[Color, ...] = (
    (1.0, 0.0, 0.0),  # red
    (0.0, 1.0, 0.0),  # green
    (0.0, 0.0, 1.0),  # blue
    (1.0, 1.0, 0.0),  # yellow
    (1.0, 0.0, 1.0),  # purple
)

# 3x3x3 grid over channel values {0, 128, 255}: 27 colors spanning the cube.
GRID27_PALETTE: tuple[Color, ...] = tuple(
    (r / 255.0, g / 255.0, b / 255.0)
    for r in (0, 128, 255)
    for g in (0, 128, 255)
    for b in (0, 128, 255)
)

PALETTES: dict[str, tuple[Color, ...] | None] = {
    "neon5": NEON5_PALETTE,
    "grid27": GRID27_PALETTE,
    "continuous": None,
}


def _check_color(color: Sequence[float]) -> Color:
    c = tuple(float(v) for v in color)
    if len(c) != 3 or any(not 0.0 <= v <= 1.0 for v in c):
        raise ValueError(f"color channels must be three values in [0, 1], got {color}")
    return c  # type: ignore[return-value]


@dataclass(frozen=True)
class NeonBeam:
    """One beam: center (row, col) in pixels, radius, intensity, color."""

    center_row: float
    center_col: float
    radius: float
    intensity: float
    color: Color

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must lie in [0, 1], got {self.intensity}")
        object.__setattr__(self, "color", _check_color(self.color))


@dataclass(frozen=True)
class BeamGroup:
    """Beams in acceptance order; applied sequentially when rendering."""

    beams: tuple[NeonBeam, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "beams", tuple(self.beams))

    def __len__(self) -> int:
        return len(self.beams)

    def __iter__(self) -> Iterator[NeonBeam]:
        return iter(self.beams)

    def append(self, beam: NeonBeam) -> "BeamGroup":
        """Return a new group with `beam` appended (groups are immutable)."""
        return BeamGroup(self.beams + (beam,))


@dataclass(frozen=True)
class ParamBounds:
    """Per-parameter [min, max] ranges plus a color palette.

    palette is an explicit list of colors, or None for free RGB sampled
    uniformly per channel.
    """

    center_row: tuple[float, float]
    center_col: tuple[float, float]
    radius: tuple[float, float]
    intensity: tuple[float, float]
    palette: tuple[Color, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("center_row", "center_col", "radius", "intensity"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} bounds inverted: {lo} > {hi}")
        if self.radius[0] <= 0.0:
            raise ValueError("radius lower bound must be positive")
        if not (0.0 <= self.intensity[0] and self.intensity[1] <= 1.0):
            raise ValueError("intensity bounds must lie within [0, 1]")
        if self.palette is not None:
            if len(self.palette) == 0:
                raise ValueError("finite palette must be nonempty")
            object.__setattr__(
                self, "palette", tuple(_check_color(c) for c in self.palette)
            )

    @classmethod
    def for_image(
        cls,
        height: int,
        width: int,
        radius: tuple[float, float] | None = None,
        intensity: tuple[float, float] = (0.2, 0.7),
        palette: Sequence[Color] | None = NEON5_PALETTE,
    ) -> "ParamBounds":
        """Default bounds: centers span the image, radius in [5, min(H,W)/4].

        On images smaller than 20px the radius range collapses to a single
        value so the bounds stay valid.
        """
        if radius is None:
            r_hi = max(5.0, min(height, width) / 4.0)
            radius = (5.0, r_hi)
        return cls(
            center_row=(0.0, float(height - 1)),
            center_col=(0.0, float(width - 1)),
            radius=radius,
            intensity=intensity,
            palette=tuple(palette) if palette is not None else None,
        )


def sample_beam(bounds: ParamBounds, rng: np.random.Generator) -> NeonBeam:
    """Draw one beam uniformly within `bounds` from a seeded stream.

    Degenerate bounds (min == max) are legal and return the single
    admissible value for that parameter.
    """
    row = float(rng.uniform(*bounds.center_row))
    col = float(rng.uniform(*bounds.center_col))
    radius = float(rng.uniform(*bounds.radius))
    intensity = float(rng.uniform(*bounds.intensity))
    if bounds.palette is None:
        color = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=3))
    else:
        color = bounds.palette[int(rng.integers(len(bounds.palette)))]
    return NeonBeam(row, col, radius, intensity, color)  # type: ignore[arg-type]


def beam_in_bounds(beam: NeonBeam, bounds: ParamBounds) -> bool:
    """True when every beam parameter lies within its bound interval."""
    ok = (
        bounds.center_row[0] <= beam.center_row <= bounds.center_row[1]
        and bounds.center_col[0] <= beam.center_col <= bounds.center_col[1]
        and bounds.radius[0] <= beam.radius <= bounds.radius[1]
        and bounds.intensity[0] <= beam.intensity <= bounds.intensity[1]
    )
    if not ok:
        return False
    if bounds.palette is not None:
        return beam.color in bounds.palette
    return True


def beam_alpha(beam: NeonBeam, row, col, profile: str = DEFAULT_PROFILE):
    """Per-pixel opacity of a beam at pixel center (row, col).

    hard:      alpha(d) = I for d <= R, else 0
    quadratic: alpha(d) = I * max(0, 1 - (d/R)^2)

    Accepts scalars or broadcastable arrays; opacity is 0 strictly outside
    the radius and never exceeds the beam intensity.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}, expected one of {PROFILES}")
    d2 = (np.asarray(row, dtype=np.float64) - beam.center_row) ** 2 + (
        np.asarray(col, dtype=np.float64) - beam.center_col
    ) ** 2
    r2 = beam.radius * beam.radius
    if profile == "hard":
        alpha = np.where(d2 <= r2, beam.intensity, 0.0)
    else:
        alpha = beam.intensity * np.maximum(0.0, 1.0 - d2 / r2)
    if np.ndim(alpha) == 0:
        return float(alpha)
    return alpha


def render(
    base: Image,
    group: BeamGroup,
    mask: Mask | None = None,
    profile: str = DEFAULT_PROFILE,
) -> Image:
    """Composite a beam group onto `base`, restricted to `mask`.

    Beams blend sequentially in group order; per pixel and beam,
    out = (1 - a) * in + a * color with a = beam_alpha * mask. Pixels with
    a = 0 for every beam are bit-identical to the base. A None mask means
    the whole image is attackable.
    """
    if mask is None:
        mask = Mask.full(base.height, base.width)
    if (mask.height, mask.width) != (base.height, base.width):
        raise ValueError(
            f"mask dimensions {mask.height}x{mask.width} do not match "
            f"image dimensions {base.height}x{base.width}"
        )
    out = base.pixels.copy()
    rows = np.arange(base.height, dtype=np.float64)[:, None]
    cols = np.arange(base.width, dtype=np.float64)[None, :]
    mask_f = mask.bits.astype(np.float64)
    for beam in group:
        a = beam_alpha(beam, rows, cols, profile) * mask_f
        hit = a > 0.0
        if not hit.any():
            continue
        a3 = a[hit][:, None]
        color = np.array(beam.color, dtype=np.float64)
        out[hit] = (1.0 - a3) * out[hit] + a3 * color
    np.clip(out, 0.0, 1.0, out=out)
    return Image(out)


def beams_to_lines(beams: Sequence[NeonBeam]) -> str:
    """Serialize beams to the line format: m n r i cr cg cb, one per line."""
    lines = []
    for b in beams:
        lines.append(
            f"{b.center_row!r} {b.center_col!r} {b.radius!r} {b.intensity!r} "
            f"{b.color[0]!r} {b.color[1]!r} {b.color[2]!r}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


def beams_from_lines(text: str) -> list[NeonBeam]:
    """Parse the line format written by beams_to_lines (commas tolerated)."""
    beams = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.replace(",", " ").strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields m n r i cr cg cb")
        m, n, r, i, cr, cg, cb = (float(v) for v in fields)
        beams.append(NeonBeam(m, n, r, i, (cr, cg, cb)))
    return beams


def beam_to_dict(beam: NeonBeam) -> dict:
    """JSON-friendly form used by attack reports and dataset manifests."""
    return {
        "m": beam.center_row,
        "n": beam.center_col,
        "r": beam.radius,
        "i": beam.intensity,
        "color": list(beam.color),
    }


def beam_from_dict(d: dict) -> NeonBeam:
    return NeonBeam(
        float(d["m"]), float(d["n"]), float(d["r"]), float(d["i"]),
        tuple(float(v) for v in d["color"]),  # type: ignore[arg-type]
    )


def parse_palette(text: str) -> tuple[Color, ...] | None:
    """Parse a palette name or an explicit 'r,g,b;r,g,b' list.

    Channel values above 1 are treated as 0-255 and rescaled.
    """
    name = text.strip().lower()
    if name in PALETTES:
        return PALETTES[name]
    colors = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = [float(v) for v in part.split(",")]
        if len(vals) != 3:
            raise ValueError(f"palette entry {part!r} is not an r,g,b triple")
        if any(v > 1.0 for v in vals):
            vals = [v / 255.0 for v in vals]
        colors.append(_check_color(vals))
    if not colors:
        raise ValueError(f"unrecognized palette {text!r}")
    return tuple(colors)


def group_to_json(group: BeamGroup) -> str:
    return json.dumps([beam_to_dict(b) for b in group], sort_keys=True)


def group_from_json(text: str) -> BeamGroup:
    return BeamGroup(tuple(beam_from_dict(d) for d in json.loads(text)))
