"""Mosaic planning and composition with exact mask remapping.

The positive image and its mined negatives tile a grid over a canvas the
size of the positive image. The ground-truth mask is remapped into the
positive cell with nearest-neighbor resampling (images use bilinear) and
every other cell is all-background, so the label stays exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .analysis import detect_positional_keywords
from .rng import SplitMix64

# Quadrant indexing is row-major: 0 upper-left, 1 upper-right,
# 2 lower-left, 3 lower-right.
UPPER_LEFT, UPPER_RIGHT, LOWER_LEFT, LOWER_RIGHT = 0, 1, 2, 3

# Positional keyword -> quadrants the positive image may occupy. Keywords
# detected elsewhere without a row here ("o'clock", "corner") never
# constrain placement; they are only recorded in provenance.
CONSTRAINT_TABLE: Dict[str, FrozenSet[int]] = {
    "top": frozenset({UPPER_LEFT, UPPER_RIGHT}),
    "high": frozenset({UPPER_LEFT, UPPER_RIGHT}),
    "above": frozenset({UPPER_LEFT, UPPER_RIGHT}),
    "left": frozenset({UPPER_LEFT, LOWER_LEFT}),
    "right": frozenset({UPPER_RIGHT, LOWER_RIGHT}),
    "bottom": frozenset({LOWER_LEFT, LOWER_RIGHT}),
    "low": frozenset({LOWER_LEFT, LOWER_RIGHT}),
    "below": frozenset({LOWER_LEFT, LOWER_RIGHT}),
}


class Grid(str, enum.Enum):
    G2X2 = "2x2"
    G3X3 = "3x3"

    @property
    def side(self) -> int:
        return 2 if self is Grid.G2X2 else 3

    @property
    def cells(self) -> int:
        return self.side * self.side


class CrossPointPolicy(str, enum.Enum):
    FIXED = "fixed"
    ANYWHERE = "anywhere"
    CENTRAL_QUARTER = "central-quarter"


@dataclass(frozen=True)
class CompositorConfig:
    grid: Grid = Grid.G2X2
    cross_point: CrossPointPolicy = CrossPointPolicy.FIXED
    constraints: bool = False

    def __post_init__(self):
        if self.grid is Grid.G3X3 and self.constraints:
            raise ValueError("positional constraints are defined for the 2x2 grid only")
        if self.grid is Grid.G3X3 and self.cross_point is not CrossPointPolicy.FIXED:
            raise ValueError("3x3 grid supports only the fixed cross-point policy")


class MosaicArityError(ValueError):
    """Negative count does not match the grid (3 for 2x2, 8 for 3x3)."""


class ComposeError(RuntimeError):
    """A source image could not be used; carries the offending image id."""

    def __init__(self, image_id, reason: str):
        super().__init__(f"image {image_id}: {reason}")
        self.image_id = image_id


@dataclass
class MosaicPlan:
    canvas_h: int
    canvas_w: int
    grid: Grid
    cross_point: Tuple[int, int]
    positive_quadrant: int
    negative_ids: Tuple[int, ...]
    row_edges: Tuple[int, ...]
    col_edges: Tuple[int, ...]
    matched_keywords: Tuple[str, ...] = ()
    constraint_fallback: bool = False

    def cell_rects(self) -> List[Tuple[int, int, int, int]]:
        """(r0, c0, r1, c1) half-open rectangles in row-major cell order."""
        rects = []
        for i in range(len(self.row_edges) - 1):
            for j in range(len(self.col_edges) - 1):
                rects.append(
                    (self.row_edges[i], self.col_edges[j],
                     self.row_edges[i + 1], self.col_edges[j + 1])
                )
        return rects


@dataclass
class AugmentedSample:
    sample_id: int
    expression: str
    category_id: int
    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    plan: MosaicPlan
    provenance: Dict = field(default_factory=dict)


def allowed_quadrants(expression: str) -> Tuple[Tuple[str, ...], FrozenSet[int]]:
    """Matched constraint keywords and the intersection of their quadrant sets.

    An empty intersection with matches present means the constraints are
    mutually unsatisfiable; the caller falls back to an unconstrained draw.
    """
    matched = tuple(
        sorted(kw for kw in detect_positional_keywords(expression) if kw in CONSTRAINT_TABLE)
    )
    allowed: FrozenSet[int] = frozenset({UPPER_LEFT, UPPER_RIGHT, LOWER_LEFT, LOWER_RIGHT})
    for kw in matched:
        allowed &= CONSTRAINT_TABLE[kw]
    return matched, allowed


def _draw_cross_point(h: int, w: int, policy: CrossPointPolicy, rng: SplitMix64) -> Tuple[int, int]:
    if policy is CrossPointPolicy.FIXED:
        return h // 2, w // 2
    if policy is CrossPointPolicy.ANYWHERE:
        # Interior points only, so all four cells keep at least one pixel.
        return 1 + rng.randbelow(h - 1), 1 + rng.randbelow(w - 1)
    if policy is CrossPointPolicy.CENTRAL_QUARTER:
        bh = max(1, h // 4)
        bw = max(1, w // 4)
        cy = (h - bh) // 2 + rng.randbelow(bh)
        cx = (w - bw) // 2 + rng.randbelow(bw)
        return min(max(cy, 1), h - 1), min(max(cx, 1), w - 1)
    raise ValueError(f"unknown cross-point policy {policy!r}")


def plan_mosaic(
    sample,
    negatives: Sequence[int],
    config: CompositorConfig,
    rng: SplitMix64,
) -> MosaicPlan:
    """Choose the positive cell, cross point, and negative ordering.

    ``sample`` needs ``expression`` and a ``mask`` with the positive image's
    dimensions (they are equal by dataset invariant).
    """
    n_cells = config.grid.cells
    if len(negatives) != n_cells - 1:
        raise MosaicArityError(
            f"{config.grid.value} grid needs {n_cells - 1} negatives, got {len(negatives)}"
        )
    h, w = sample.mask.height, sample.mask.width
    if h < config.grid.side or w < config.grid.side:
        raise ComposeError(sample.image_id, f"canvas {h}x{w} too small for {config.grid.value}")

    matched: Tuple[str, ...] = ()
    fallback = False
    if config.constraints:
        matched, allowed = allowed_quadrants(sample.expression)
        if matched and allowed:
            choices = sorted(allowed)
            quadrant = choices[rng.randbelow(len(choices))]
        else:
            fallback = bool(matched)  # matched but unsatisfiable
            quadrant = rng.randbelow(n_cells)
    else:
        quadrant = rng.randbelow(n_cells)

    if config.grid is Grid.G2X2:
        cy, cx = _draw_cross_point(h, w, config.cross_point, rng)
        row_edges = (0, cy, h)
        col_edges = (0, cx, w)
    else:
        row_edges = (0, h // 3, (2 * h) // 3, h)
        col_edges = (0, w // 3, (2 * w) // 3, w)
        cy, cx = row_edges[1], col_edges[1]

    return MosaicPlan(
        canvas_h=h,
        canvas_w=w,
        grid=config.grid,
        cross_point=(cy, cx),
        positive_quadrant=quadrant,
        negative_ids=tuple(negatives),
        row_edges=row_edges,
        col_edges=col_edges,
        matched_keywords=matched,
        constraint_fallback=fallback,
    )


def nn_resize_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resample of a bool mask via exact integer index math.

    Output pixel (r, c) copies source pixel
    (floor((r + 0.5) * src_h / out_h), floor((c + 0.5) * src_w / out_w)).
    """
    mask = np.asarray(mask, dtype=bool)
    src_h, src_w = mask.shape
    rows = ((2 * np.arange(out_h, dtype=np.int64) + 1) * src_h) // (2 * out_h)
    cols = ((2 * np.arange(out_w, dtype=np.int64) + 1) * src_w) // (2 * out_w)
    return mask[np.ix_(rows, cols)]


def resize_image_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return np.asarray(
        Image.fromarray(image).resize((out_w, out_h), Image.BILINEAR), dtype=np.uint8
    )


def compose(
    sample,
    positive_image: np.ndarray,
    negative_images: Sequence[np.ndarray],
    plan: MosaicPlan,
    provenance: Optional[Dict] = None,
) -> AugmentedSample:
    """Assemble the mosaic; the composed mask stays inside the positive cell."""
    if len(negative_images) != plan.grid.cells - 1:
        raise MosaicArityError(
            f"plan expects {plan.grid.cells - 1} negative images, got {len(negative_images)}"
        )
    canvas = np.zeros((plan.canvas_h, plan.canvas_w, 3), dtype=np.uint8)
    mask_canvas = np.zeros((plan.canvas_h, plan.canvas_w), dtype=bool)
    source_mask = sample.mask.decode()

    negatives = iter(negative_images)
    for cell_index, (r0, c0, r1, c1) in enumerate(plan.cell_rects()):
        ch, cw = r1 - r0, c1 - c0
        if cell_index == plan.positive_quadrant:
            src = positive_image
            mask_canvas[r0:r1, c0:c1] = nn_resize_mask(source_mask, ch, cw)
        else:
            src = next(negatives)
        canvas[r0:r1, c0:c1] = resize_image_bilinear(src, ch, cw)

    return AugmentedSample(
        sample_id=sample.sample_id,
        expression=sample.expression,
        category_id=sample.category_id,
        image=canvas,
        mask=mask_canvas,
        plan=plan,
        provenance=dict(provenance or {}),
    )


def render_preview(aug: AugmentedSample) -> np.ndarray:
    """Composed image with the mask tinted red and cell borders drawn."""
    out = aug.image.copy()
    tint = out[aug.mask].astype(np.uint16)
    tint[:, 0] = np.minimum(255, tint[:, 0] // 2 + 128)
    tint[:, 1] //= 2
    tint[:, 2] //= 2
    out[aug.mask] = tint.astype(np.uint8)
    for r in aug.plan.row_edges[1:-1]:
        out[r, :] = (255, 255, 0)
    for c in aug.plan.col_edges[1:-1]:
        out[:, c] = (255, 255, 0)
    return out
