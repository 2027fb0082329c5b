"""Segmentation mask payloads and codecs.

Masks travel as uncompressed COCO-style RLE (column-major, first run is
background), as flat polygon rings, or as dense boolean bitmaps. Polygons
are rasterized once at dataset load and treated as dense afterwards; output
masks are always serialized back to uncompressed RLE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

RLE = "rle"
POLYGON = "polygon"
BITMAP = "bitmap"


class MaskCorruptionError(ValueError):
    """Raised when an encoded payload cannot describe a height x width mask."""


@dataclass
class SegmentationMask:
    height: int
    width: int
    encoding: str
    payload: object

    def decode(self) -> np.ndarray:
        return decode_mask(self)


def rle_decode(counts: Sequence[int], height: int, width: int) -> np.ndarray:
    """Expand run lengths (background first, column-major) to a bool bitmap."""
    counts = list(counts)
    if any(c < 0 for c in counts):
        raise MaskCorruptionError(f"negative run length in {counts!r}")
    total = sum(counts)
    if total != height * width:
        raise MaskCorruptionError(
            f"run sum {total} != {height}x{width} = {height * width}"
        )
    flat = np.zeros(height * width, dtype=bool)
    pos = 0
    value = False
    for run in counts:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape((height, width), order="F")


def rle_encode(bitmap: np.ndarray) -> List[int]:
    """Inverse of :func:`rle_decode`; first count is the leading background run."""
    flat = np.asarray(bitmap, dtype=bool).ravel(order="F")
    if flat.size == 0:
        return [0]
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def polygon_rasterize(rings: Sequence[Sequence[float]], height: int, width: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centers; rings are ORed together.

    A pixel (r, c) is foreground when the point (c + 0.5, r + 0.5) falls
    inside the ring under the even-odd rule. Edges satisfying
    ymin <= y < ymax contribute a crossing, so shared vertices are not
    double-counted and horizontal edges are ignored.
    """
    out = np.zeros((height, width), dtype=bool)
    for ring in rings:
        if len(ring) < 6 or len(ring) % 2 != 0:
            raise MaskCorruptionError(f"polygon ring needs >= 3 (x, y) pairs, got {len(ring)} values")
        xs = np.asarray(ring[0::2], dtype=np.float64)
        ys = np.asarray(ring[1::2], dtype=np.float64)
        x2 = np.roll(xs, -1)
        y2 = np.roll(ys, -1)
        for r in range(height):
            y = r + 0.5
            lo = np.minimum(ys, y2)
            hi = np.maximum(ys, y2)
            hit = (lo <= y) & (y < hi)
            if not hit.any():
                continue
            t = (y - ys[hit]) / (y2[hit] - ys[hit])
            crossings = np.sort(xs[hit] + t * (x2[hit] - xs[hit]))
            for i in range(0, len(crossings) - 1, 2):
                c0 = int(np.ceil(crossings[i] - 0.5))
                c1 = int(np.ceil(crossings[i + 1] - 0.5))
                if c1 > c0:
                    out[r, max(c0, 0):min(c1, width)] = True
    return out


def decode_mask(mask: SegmentationMask) -> np.ndarray:
    """Decode any supported payload to a height x width bool bitmap."""
    if mask.encoding == RLE:
        return rle_decode(mask.payload, mask.height, mask.width)
    if mask.encoding == POLYGON:
        return polygon_rasterize(mask.payload, mask.height, mask.width)
    if mask.encoding == BITMAP:
        bitmap = np.asarray(mask.payload, dtype=bool)
        if bitmap.shape != (mask.height, mask.width):
            raise MaskCorruptionError(
                f"bitmap shape {bitmap.shape} != ({mask.height}, {mask.width})"
            )
        return bitmap
    raise MaskCorruptionError(f"unknown mask encoding {mask.encoding!r}")


def encode_bitmap(bitmap: np.ndarray) -> SegmentationMask:
    """Wrap a dense bitmap as an uncompressed-RLE mask."""
    bitmap = np.asarray(bitmap, dtype=bool)
    h, w = bitmap.shape
    return SegmentationMask(height=h, width=w, encoding=RLE, payload=rle_encode(bitmap))


def mask_bbox(bitmap: np.ndarray) -> Optional[Tuple[int, int, int, int]]:
    """Tight (x, y, w, h) box of the foreground, or None for an empty mask."""
    rows = np.flatnonzero(bitmap.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(bitmap.any(axis=0))
    return (
        int(cols[0]),
        int(rows[0]),
        int(cols[-1] - cols[0] + 1),
        int(rows[-1] - rows[0] + 1),
    )
