"""Independent reference implementations used to check the package.

Everything here is deliberately naive (plain loops, no numpy vectorization,
no shared helpers from the package under test) so a bug in the production
path cannot hide in its own oracle.
"""

from __future__ import annotations

import numpy as np


def rle_decode_loop(counts, height, width):
    """Column-major RLE expansion, one pixel at a time."""
    grid = [[False] * width for _ in range(height)]
    value = False
    pos = 0
    for run in counts:
        for _ in range(run):
            r = pos % height
            c = pos // height
            grid[r][c] = value
            pos += 1
        value = not value
    assert pos == height * width
    return np.array(grid, dtype=bool)


def naive_dot(a, b):
    """Sequential float accumulation over the vector dimension."""
    total = 0.0
    for x, y in zip(a, b):
        total += float(x) * float(y)
    return total


def brute_force_pool(
    image_ids,
    t2i_by_id,
    i2i_by_id,
    positive_image_id,
    mode,
    tau,
    k,
    tau_t2i=None,
    tau_i2i=None,
):
    """Filter-then-sort reference for the candidate pool.

    Scores arrive as id->float32 maps so the comparison uses exactly the
    values the store reports. Returns (pool_ids, excluded_count).
    """
    survivors = []
    excluded = 0
    for image_id in image_ids:
        if image_id == positive_image_id:
            continue
        if mode == "uniform":
            survivors.append(image_id)
            continue
        if mode == "t2i":
            drop = tau is not None and t2i_by_id[image_id] >= tau
        elif mode == "i2i-upper":
            drop = tau is not None and i2i_by_id[image_id] >= tau
        elif mode == "dual":
            drop = t2i_by_id[image_id] >= tau_t2i or i2i_by_id[image_id] >= tau_i2i
        else:
            raise ValueError(mode)
        if drop:
            excluded += 1
        else:
            survivors.append(image_id)
    if mode == "uniform":
        return survivors, 0
    survivors.sort(key=lambda i: (-float(t2i_by_id[i]), i))
    return survivors[:k], excluded


def nn_downscale_loop(mask, out_h, out_w):
    """Nearest-neighbor resize by the center-mapping formula, pixel by pixel."""
    src_h = len(mask)
    src_w = len(mask[0])
    out = [[False] * out_w for _ in range(out_h)]
    for r in range(out_h):
        for c in range(out_w):
            sr = ((2 * r + 1) * src_h) // (2 * out_h)
            sc = ((2 * c + 1) * src_w) // (2 * out_w)
            out[r][c] = bool(mask[sr][sc])
    return np.array(out, dtype=bool)


def box_iou_corners(a, b):
    """IoU from explicit corner coordinates."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ax1, ay1 = ax0 + aw, ay0 + ah
    bx1, by1 = bx0 + bw, by0 + bh
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def point_in_polygon_evenodd(px, py, ring):
    """Ray casting to the right of (px, py) with the even-odd rule."""
    inside = False
    n = len(ring) // 2
    for i in range(n):
        x1, y1 = ring[2 * i], ring[2 * i + 1]
        x2, y2 = ring[(2 * i + 2) % (2 * n)], ring[(2 * i + 3) % (2 * n)]
        if (y1 <= py < y2) or (y2 <= py < y1):
            x_cross = x1 + (py - y1) / (y2 - y1) * (x2 - x1)
            if px < x_cross:
                inside = not inside
    return inside
