"""Dataset difficulty stratification: distractor counts, object scale,
expression length bins, positional keywords, corpus statistics."""

from __future__ import annotations

import csv
import json
import logging
import string
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .dataset import ImageRecord, ReferringSample

logger = logging.getLogger(__name__)

# Words that tie an expression to a location in the frame. The first eight
# are the common positional descriptors; "above"/"below" join them because
# the placement-constraint table gives them quadrant rules.
POSITIONAL_KEYWORDS: Tuple[str, ...] = (
    "left", "right", "low", "high", "top", "bottom", "above", "below",
    "o'clock", "corner",
)

LENGTH_BINS: Tuple[Tuple[int, int], ...] = ((1, 5), (6, 7), (8, 10), (11, 20))
OVERFLOW_BIN = "other"


def tokenize(expression: str) -> List[str]:
    """Whitespace split, lowercased, edge punctuation stripped per token."""
    tokens = []
    for raw in expression.lower().split():
        token = raw.strip(string.punctuation)
        if token:
            tokens.append(token)
    return tokens


def detect_positional_keywords(
    expression: str, keywords: Sequence[str] = POSITIONAL_KEYWORDS
) -> Set[str]:
    """Whole-word, case-insensitive matches from ``keywords``."""
    tokens = set(tokenize(expression))
    return {kw for kw in keywords if kw in tokens}


@dataclass
class DetectionRecord:
    image_id: int
    category_id: int
    bbox: Tuple[float, float, float, float]
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score {self.score} outside [0, 1]")


@dataclass
class DifficultyProfile:
    sample_id: int
    negative_object_count: int
    target_area_fraction: float
    expression_length: int
    has_positional_keyword: bool


def load_detections(path) -> Dict[int, List[DetectionRecord]]:
    """Read a COCO-results JSON list and group detections by image."""
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    by_image: Dict[int, List[DetectionRecord]] = defaultdict(list)
    for item in raw:
        rec = DetectionRecord(
            image_id=int(item["image_id"]),
            category_id=int(item["category_id"]),
            bbox=tuple(float(v) for v in item["bbox"]),
            score=float(item.get("score", 1.0)),
        )
        by_image[rec.image_id].append(rec)
    return dict(by_image)


def box_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of two (x, y, w, h) boxes."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix0 = max(ax0, bx0)
    iy0 = max(ay0, by0)
    ix1 = min(ax0 + aw, bx0 + bw)
    iy1 = min(ay0 + ah, by0 + bh)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def count_negative_objects(
    sample: ReferringSample,
    detections: Sequence[DetectionRecord],
    iou_floor: float = 0.5,
) -> int:
    """Same-class detections that do not overlap the target enough to be it.

    A detection with IoU >= iou_floor against the target box is treated as
    the target itself (or a duplicate of it) and suppressed; the rest of the
    same-class detections count as distractors.
    """
    if not detections:
        logger.warning("sample %s: no detections for image %s", sample.sample_id, sample.image_id)
        return 0
    count = 0
    for det in detections:
        if det.category_id != sample.category_id:
            continue
        if box_iou(det.bbox, sample.bbox) >= iou_floor:
            continue
        count += 1
    return count


def length_bin(n_tokens: int) -> str:
    for lo, hi in LENGTH_BINS:
        if lo <= n_tokens <= hi:
            return f"{lo}-{hi}"
    return OVERFLOW_BIN


def bin_by_sentence_length(samples: Iterable[ReferringSample]) -> Dict[str, int]:
    """Histogram of whitespace token counts over the standard length bins."""
    hist = Counter(length_bin(len(s.expression.split())) for s in samples)
    for lo, hi in LENGTH_BINS:
        hist.setdefault(f"{lo}-{hi}", 0)
    hist.setdefault(OVERFLOW_BIN, 0)
    return dict(hist)


@dataclass
class CorpusStats:
    n_images: int
    n_expressions: int
    mean_query_length: float
    mean_objects_per_query: float


def corpus_stats(images: Sequence[ImageRecord], samples: Sequence[ReferringSample]) -> CorpusStats:
    """Image/expression counts, mean query length in tokens, and the mean
    number of annotated objects in a queried image, averaged per query."""
    if not samples:
        return CorpusStats(len(images), 0, 0.0, 0.0)
    objects_per_image: Dict[int, set] = defaultdict(set)
    for s in samples:
        objects_per_image[s.image_id].add(s.annotation_id)
    mean_len = sum(len(s.expression.split()) for s in samples) / len(samples)
    mean_obj = sum(len(objects_per_image[s.image_id]) for s in samples) / len(samples)
    return CorpusStats(
        n_images=len(images),
        n_expressions=len(samples),
        mean_query_length=mean_len,
        mean_objects_per_query=mean_obj,
    )


def build_profiles(
    samples: Sequence[ReferringSample],
    detections: Optional[Mapping[int, Sequence[DetectionRecord]]] = None,
    iou_floor: float = 0.5,
) -> List[DifficultyProfile]:
    profiles = []
    for s in samples:
        bitmap = s.mask.decode()
        area = int(bitmap.sum())
        dets = list(detections.get(s.image_id, ())) if detections else []
        profiles.append(
            DifficultyProfile(
                sample_id=s.sample_id,
                negative_object_count=count_negative_objects(s, dets, iou_floor),
                target_area_fraction=area / (s.mask.height * s.mask.width),
                expression_length=len(s.expression.split()),
                has_positional_keyword=bool(detect_positional_keywords(s.expression)),
            )
        )
    return profiles


def write_profiles_csv(profiles: Sequence[DifficultyProfile], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["sample_id", "negative_object_count", "target_area_fraction",
             "expression_length", "has_positional_keyword"]
        )
        for p in profiles:
            writer.writerow(
                [p.sample_id, p.negative_object_count, f"{p.target_area_fraction:.8f}",
                 p.expression_length, int(p.has_positional_keyword)]
            )


def summarize(
    images: Sequence[ImageRecord],
    samples: Sequence[ReferringSample],
    profiles: Sequence[DifficultyProfile],
) -> Dict:
    stats = corpus_stats(images, samples)
    hist = bin_by_sentence_length(samples)
    with_kw = sum(1 for p in profiles if p.has_positional_keyword)
    return {
        "corpus": {
            "n_images": stats.n_images,
            "n_expressions": stats.n_expressions,
            "mean_query_length": stats.mean_query_length,
            "mean_objects_per_query": stats.mean_objects_per_query,
        },
        "length_bins": hist,
        "positional_keyword_samples": with_kw,
        "mean_negative_objects": (
            sum(p.negative_object_count for p in profiles) / len(profiles) if profiles else 0.0
        ),
    }


def markdown_length_table(hist: Mapping[str, int]) -> str:
    labels = [f"{lo}-{hi}" for lo, hi in LENGTH_BINS] + [OVERFLOW_BIN]
    header = "| length | " + " | ".join(labels) + " |"
    rule = "|---" * (len(labels) + 1) + "|"
    row = "| samples | " + " | ".join(str(hist.get(l, 0)) for l in labels) + " |"
    return "\n".join([header, rule, row])
