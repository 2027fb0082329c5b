"""COCO-style referring-segmentation dataset I/O.

Input is a COCO-flavoured JSON annotation file whose annotations carry an
``expressions: [str]`` array; every (annotation, expression) pair becomes
one sample. Output is a self-contained dataset directory: PNG/copied
images, an annotations JSON with per-record provenance, and a manifest of
SHA-256 digests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from . import masks as masklib
from .masks import SegmentationMask

logger = logging.getLogger(__name__)

# sample_id packs (annotation_id, expression index) into one u64 so samples
# stay addressable in the binary embedding format.
_EXPR_BITS = 16
_MAX_ANN_ID = 1 << (64 - _EXPR_BITS)
_MAX_EXPR = 1 << _EXPR_BITS


class DatasetFormatError(ValueError):
    """Malformed annotation JSON (reported with a byte offset when known)."""


class DatasetIntegrityError(ValueError):
    """Well-formed JSON that violates cross-references or invariants."""


@dataclass
class ImageRecord:
    image_id: int
    path: Path
    height: int
    width: int


@dataclass
class ReferringSample:
    sample_id: int
    annotation_id: int
    image_id: int
    expression: str
    mask: SegmentationMask
    category_id: int
    bbox: Tuple[float, float, float, float]


def make_sample_id(annotation_id: int, expression_index: int) -> int:
    if not 0 <= annotation_id < _MAX_ANN_ID:
        raise DatasetIntegrityError(f"annotation id {annotation_id} outside [0, 2^48)")
    if not 0 <= expression_index < _MAX_EXPR:
        raise DatasetIntegrityError(f"expression index {expression_index} outside [0, 65536)")
    return (annotation_id << _EXPR_BITS) | expression_index


def split_sample_id(sample_id: int) -> Tuple[int, int]:
    return sample_id >> _EXPR_BITS, sample_id & (_MAX_EXPR - 1)


def _parse_mask(segmentation, height: int, width: int) -> SegmentationMask:
    if isinstance(segmentation, dict):
        size = segmentation.get("size")
        if size is not None and tuple(size) != (height, width):
            raise DatasetIntegrityError(
                f"RLE size {size} != image dims ({height}, {width})"
            )
        counts = segmentation["counts"]
        if not isinstance(counts, list):
            raise DatasetFormatError("compressed RLE strings are not supported; use count lists")
        mask = SegmentationMask(height, width, masklib.RLE, [int(c) for c in counts])
        # Validates the run sum without materializing the bitmap twice.
        masklib.rle_decode(mask.payload, height, width)
        return mask
    if isinstance(segmentation, list):
        bitmap = masklib.polygon_rasterize(segmentation, height, width)
        return SegmentationMask(height, width, masklib.BITMAP, bitmap)
    raise DatasetFormatError(f"unsupported segmentation payload: {type(segmentation).__name__}")


def load_dataset(path: Union[str, Path]) -> Tuple[List[ImageRecord], List[ReferringSample]]:
    """Load images and referring samples in annotation-file order."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"malformed JSON at byte offset {e.pos}: {e.msg}") from e
    for key in ("images", "annotations"):
        if key not in doc:
            raise DatasetFormatError(f"missing top-level {key!r} array")

    root = path.parent
    images: List[ImageRecord] = []
    for entry in doc["images"]:
        rec = ImageRecord(
            image_id=int(entry["id"]),
            path=root / entry["file_name"],
            height=int(entry["height"]),
            width=int(entry["width"]),
        )
        if rec.height <= 0 or rec.width <= 0:
            raise DatasetIntegrityError(f"image {rec.image_id} has non-positive dims")
        if not rec.path.exists():
            raise DatasetIntegrityError(f"image file missing: {rec.path}")
        images.append(rec)
    by_id = {rec.image_id: rec for rec in images}
    if len(by_id) != len(images):
        raise DatasetIntegrityError("duplicate image ids in dataset")

    dangling = sorted(
        {int(a["image_id"]) for a in doc["annotations"]} - set(by_id)
    )
    if dangling:
        raise DatasetIntegrityError(f"annotations reference missing images: {dangling}")

    samples: List[ReferringSample] = []
    for ann in doc["annotations"]:
        rec = by_id[int(ann["image_id"])]
        mask = _parse_mask(ann["segmentation"], rec.height, rec.width)
        expressions = ann.get("expressions", [])
        if not isinstance(expressions, list):
            raise DatasetFormatError(f"annotation {ann.get('id')}: expressions must be a list")
        # Re-loaded outputs carry explicit per-expression sample ids so that
        # identity survives a write -> load round trip.
        explicit_ids = ann.get("expression_ids")
        if explicit_ids is not None and len(explicit_ids) != len(expressions):
            raise DatasetFormatError(
                f"annotation {ann.get('id')}: expression_ids/expressions length mismatch"
            )
        bbox = ann.get("bbox")
        if bbox is None:
            box = masklib.mask_bbox(mask.decode())
            bbox = box if box is not None else (0, 0, 0, 0)
        for j, expression in enumerate(expressions):
            samples.append(
                ReferringSample(
                    sample_id=(
                        int(explicit_ids[j]) if explicit_ids is not None
                        else make_sample_id(int(ann["id"]), j)
                    ),
                    annotation_id=int(ann["id"]),
                    image_id=rec.image_id,
                    expression=str(expression),
                    mask=mask,
                    category_id=int(ann.get("category_id", 0)),
                    bbox=tuple(float(v) for v in bbox),
                )
            )
    return images, samples


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def write_augmented(
    records: Sequence,
    images: Mapping[int, ImageRecord],
    out_dir: Union[str, Path],
    config_echo: Union[Dict, None] = None,
) -> Path:
    """Materialize pipeline outputs and return the manifest path.

    ``records`` mixes composed samples (anything exposing ``sample_id``,
    ``expression``, ``image``, ``mask``, ``plan``, ``provenance``) and
    pass-through :class:`ReferringSample` instances. On any I/O failure a
    ``PARTIAL`` marker file is left in ``out_dir`` before re-raising.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / "PARTIAL"
    marker.write_text("output incomplete\n", encoding="utf-8")
    try:
        manifest_path = _write_all(records, images, out_dir, images_dir, config_echo)
    except Exception:
        logger.exception("aborting write; %s left in place", marker)
        raise
    marker.unlink()
    return manifest_path


def _write_all(records, images, out_dir, images_dir, config_echo):
    out_images = []
    out_annotations = []
    copied: Dict[int, str] = {}
    base_id = max((rec.image_id for rec in images.values()), default=0) + 1

    for index, record in enumerate(records):
        if isinstance(record, ReferringSample):
            src = images[record.image_id]
            if record.image_id not in copied:
                name = f"orig_{record.image_id}{src.path.suffix}"
                shutil.copyfile(src.path, images_dir / name)
                copied[record.image_id] = name
                out_images.append(
                    {"id": record.image_id, "file_name": f"images/{copied[record.image_id]}",
                     "height": src.height, "width": src.width}
                )
            bitmap = record.mask.decode()
            out_annotations.append(
                {
                    "id": record.annotation_id,
                    "image_id": record.image_id,
                    "category_id": record.category_id,
                    "bbox": list(record.bbox),
                    "area": int(bitmap.sum()),
                    "segmentation": {"size": [record.mask.height, record.mask.width],
                                     "counts": masklib.rle_encode(bitmap)},
                    "expressions": [record.expression],
                    "expression_ids": [record.sample_id],
                    "provenance": {"augmented": False, "source_sample_id": record.sample_id},
                }
            )
        else:
            image_id = base_id + index
            name = f"aug_{record.sample_id}.png"
            Image.fromarray(record.image).save(images_dir / name)
            h, w = record.mask.shape
            box = masklib.mask_bbox(record.mask) or (0, 0, 0, 0)
            out_images.append(
                {"id": image_id, "file_name": f"images/{name}", "height": h, "width": w}
            )
            out_annotations.append(
                {
                    "id": split_sample_id(record.sample_id)[0],
                    "image_id": image_id,
                    "category_id": record.category_id,
                    "bbox": list(box),
                    "area": int(record.mask.sum()),
                    "segmentation": {"size": [h, w], "counts": masklib.rle_encode(record.mask)},
                    "expressions": [record.expression],
                    "expression_ids": [record.sample_id],
                    "provenance": record.provenance,
                }
            )

    ann_path = out_dir / "annotations.json"
    _dump_json({"images": out_images, "annotations": out_annotations}, ann_path)

    files = sorted(
        str(p.relative_to(out_dir))
        for p in [ann_path, *images_dir.iterdir()]
    )
    manifest = {
        "files": [{"path": f, "sha256": _sha256(out_dir / f)} for f in files],
        "config": config_echo or {},
    }
    manifest_path = out_dir / "manifest.json"
    _dump_json(manifest, manifest_path)
    return manifest_path
