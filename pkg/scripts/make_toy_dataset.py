#!/usr/bin/env python3
"""Generate a small synthetic referring-segmentation dataset plus embeddings.

Each image holds a few colored shapes; one shape per image is annotated with
a referring expression. Embeddings are category-structured unit vectors
(same shape class => nearby vectors), so the mining bounds behave the way
they do on real data: low tau prunes same-class lookalikes, the top of the
ranking is dominated by the referenced class.

Example:
    python scripts/make_toy_dataset.py --out demo_data --images 40 --seed 7
    nemo-forge augment --dataset demo_data/annotations.json \
        --embeddings demo_data/embeddings.bin --out demo_out \
        --tau 0.95 --k 10 --gamma 0.8 --seed 7 --dump-previews 4
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from nemo_forge.embeddings import EmbeddingStore, save_embeddings, unit_rows
from nemo_forge.dataset import make_sample_id
from nemo_forge.masks import rle_encode

SHAPES = ("box", "disk", "stripe")
COLORS = {"red": (200, 40, 40), "green": (40, 180, 60), "blue": (50, 80, 220)}
POSITIONS = ("left", "right", "top", "bottom", "")


def draw_shape(draw, shape, x, y, r, color):
    if shape == "box":
        draw.rectangle([x - r, y - r, x + r, y + r], fill=color)
    elif shape == "disk":
        draw.ellipse([x - r, y - r, x + r, y + r], fill=color)
    else:
        draw.rectangle([x - r, y - r // 3, x + r, y + r // 3], fill=color)


def make_image(rng, h, w):
    """Render 2-4 shapes; return (pixels, target mask, shape, color, cx)."""
    img = Image.new("RGB", (w, h), tuple(int(v) for v in rng.integers(180, 240, 3)))
    draw = ImageDraw.Draw(img)
    n_shapes = int(rng.integers(2, 5))
    target = None
    for k in range(n_shapes):
        shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
        color_name = list(COLORS)[int(rng.integers(0, len(COLORS)))]
        r = int(rng.integers(4, min(h, w) // 4))
        x = int(rng.integers(r, w - r))
        y = int(rng.integers(r, h - r))
        if k == 0:
            # Render the target last so nothing occludes it; remember specs.
            target = (shape, color_name, x, y, r)
            continue
        draw_shape(draw, shape, x, y, r, COLORS[color_name])
    shape, color_name, x, y, r = target
    before = np.asarray(img).copy()
    draw_shape(draw, shape, x, y, r, COLORS[color_name])
    after = np.asarray(img)
    mask = (after != before).any(axis=2)
    return after, mask, shape, color_name, x


def class_vector(rng_global, cache, key, dim):
    if key not in cache:
        cache[key] = rng_global.normal(size=dim)
    return cache[key]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True)
    parser.add_argument("--images", type=int, default=24)
    parser.add_argument("--height", type=int, default=96)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)

    images, annotations = [], []
    image_vecs, sample_vecs, sample_ids = [], [], []
    class_cache = {}
    for i in range(args.images):
        pixels, mask, shape, color_name, cx = make_image(rng, args.height, args.width)
        image_id = 1000 + i
        name = f"images/toy_{image_id}.png"
        Image.fromarray(pixels).save(out / name)
        images.append({"id": image_id, "file_name": name,
                       "height": args.height, "width": args.width})

        side = "left" if cx < args.width // 2 else "right"
        position = POSITIONS[int(rng.integers(0, len(POSITIONS)))]
        phrase = f"the {color_name} {shape}"
        if position:
            phrase += f" at the {side}" if position in ("left", "right") else f" near the {position}"
        ys, xs = np.nonzero(mask)
        annotations.append({
            "id": i + 1,
            "image_id": image_id,
            "category_id": SHAPES.index(shape) + 1,
            "bbox": [int(xs.min()), int(ys.min()),
                     int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)],
            "area": int(mask.sum()),
            "segmentation": {"size": [args.height, args.width], "counts": rle_encode(mask)},
            "expressions": [phrase],
        })

        base = class_vector(rng, class_cache, (shape, color_name), args.dim)
        image_vecs.append(base + 0.35 * rng.normal(size=args.dim))
        sample_vecs.append(base + 0.45 * rng.normal(size=args.dim))
        sample_ids.append(make_sample_id(i + 1, 0))

    (out / "annotations.json").write_text(
        json.dumps({"images": images, "annotations": annotations}), encoding="utf-8"
    )
    store = EmbeddingStore(
        dim=args.dim,
        image_ids=[img["id"] for img in images],
        image_matrix=unit_rows(np.array(image_vecs)),
        sample_ids=sample_ids,
        text_matrix=unit_rows(np.array(sample_vecs)),
    )
    save_embeddings(store, out / "embeddings.bin")
    print(f"wrote {args.images} images, {len(annotations)} annotations to {out}")


if __name__ == "__main__":
    main()
