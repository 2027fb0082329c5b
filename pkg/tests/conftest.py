"""Shared synthetic fixtures: tiny datasets, unit embeddings, binary files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from nemo_forge.embeddings import EmbeddingStore, save_embeddings, unit_rows
from nemo_forge.dataset import make_sample_id
from nemo_forge.masks import rle_encode


def make_store(image_ids, image_vecs, sample_ids=(), text_vecs=None, normalize=True):
    image_vecs = np.asarray(image_vecs, dtype=np.float64).reshape(len(image_ids), -1)
    dim = image_vecs.shape[1]
    if text_vecs is None or len(sample_ids) == 0:
        text_vecs = np.zeros((0, dim))
    else:
        text_vecs = np.asarray(text_vecs, dtype=np.float64).reshape(len(sample_ids), -1)
    if normalize:
        if len(image_ids):
            image_vecs = unit_rows(image_vecs)
        if len(sample_ids):
            text_vecs = unit_rows(text_vecs)
    return EmbeddingStore(
        dim=dim,
        image_ids=list(image_ids),
        image_matrix=np.asarray(image_vecs, dtype=np.float32),
        sample_ids=list(sample_ids),
        text_matrix=np.asarray(text_vecs, dtype=np.float32),
    )


def random_unit_vectors(rng, n, dim):
    vecs = rng.normal(size=(n, dim))
    return unit_rows(vecs)


def random_mask(rng, height, width):
    """Random rectangle plus salt; guaranteed nonempty."""
    mask = np.zeros((height, width), dtype=bool)
    y0 = int(rng.integers(0, height - 1))
    x0 = int(rng.integers(0, width - 1))
    y1 = int(rng.integers(y0 + 1, height + 1))
    x1 = int(rng.integers(x0 + 1, width + 1))
    mask[y0:y1, x0:x1] = True
    salt = rng.random((height, width)) < 0.02
    mask |= salt
    return mask


def write_toy_dataset(
    root: Path,
    n_images: int = 8,
    expressions_per_image: int = 1,
    image_size=(40, 48),
    seed: int = 1234,
    expression_fn=None,
):
    """Create images/, annotations.json, and aligned embeddings.bin.

    Returns (annotations_path, embeddings_path). One annotation per image;
    sample ids follow the (annotation_id, expression_index) packing.
    """
    rng = np.random.default_rng(seed)
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    h, w = image_size
    images = []
    annotations = []
    sample_ids = []
    for i in range(n_images):
        image_id = 100 + i
        pixels = rng.integers(0, 255, size=(h, w, 3), dtype=np.uint8)
        name = f"images/img_{image_id}.png"
        Image.fromarray(pixels).save(root / name)
        images.append({"id": image_id, "file_name": name, "height": h, "width": w})
        mask = random_mask(rng, h, w)
        ys, xs = np.nonzero(mask)
        bbox = [int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1)]
        expressions = []
        for j in range(expressions_per_image):
            if expression_fn is not None:
                expressions.append(expression_fn(i, j))
            else:
                expressions.append(f"object {i} variant {j}")
            sample_ids.append(make_sample_id(i + 1, j))
        annotations.append(
            {
                "id": i + 1,
                "image_id": image_id,
                "category_id": int(rng.integers(1, 4)),
                "bbox": bbox,
                "area": int(mask.sum()),
                "segmentation": {"size": [h, w], "counts": rle_encode(mask)},
                "expressions": expressions,
            }
        )
    ann_path = root / "annotations.json"
    ann_path.write_text(
        json.dumps({"images": images, "annotations": annotations}), encoding="utf-8"
    )

    dim = 16
    image_ids = [img["id"] for img in images]
    store = make_store(
        image_ids,
        random_unit_vectors(rng, len(image_ids), dim),
        sample_ids,
        random_unit_vectors(rng, len(sample_ids), dim),
        normalize=False,
    )
    emb_path = root / "embeddings.bin"
    save_embeddings(store, emb_path)
    return ann_path, emb_path


@pytest.fixture
def toy_dataset(tmp_path):
    return write_toy_dataset(tmp_path)
