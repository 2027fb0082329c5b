"""End-to-end augmentation run: gate, mine, plan, compose, write.

Each sample draws its entire random stream from (master_seed, sample_id),
so a run is a pure function of (dataset, embeddings, config, seed) no
matter how many workers execute it.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .dataset import ImageRecord, ReferringSample, write_augmented
from .embeddings import EmbeddingStore
from .mining import MiningConfig, PoolTooSmallError, build_pool, select_negatives
from .mosaic import (
    AugmentedSample,
    ComposeError,
    CompositorConfig,
    compose,
    plan_mosaic,
    render_preview,
)
from .rng import derive_sample_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    mining: MiningConfig = field(default_factory=MiningConfig)
    compositor: CompositorConfig = field(default_factory=CompositorConfig)
    gamma: float = 0.6
    master_seed: int = 0
    worker_count: int = 1

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")

    def echo(self) -> Dict:
        """Semantic config; excludes worker_count, which never affects output."""
        return {
            "gamma": self.gamma,
            "seed": self.master_seed,
            "tau": self.mining.tau,
            "tau_t2i": self.mining.tau_t2i,
            "tau_i2i": self.mining.tau_i2i,
            "k": self.mining.k,
            "mode": self.mining.mode.value,
            "grid": self.compositor.grid.value,
            "cross_point": self.compositor.cross_point.value,
            "constraints": "on" if self.compositor.constraints else "off",
        }


@dataclass
class RunReport:
    samples: int = 0
    augmented: int = 0
    passed_through: int = 0
    pool_too_small: int = 0
    errors: int = 0
    constraint_fallbacks: int = 0
    wall_time_s: float = 0.0
    stage_seconds: Dict[str, float] = field(default_factory=dict)
    error_log: List[Dict] = field(default_factory=list)
    config: Dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True)


class PipelineError(RuntimeError):
    """Raised after writing when more than 1% of samples errored."""

    def __init__(self, report: RunReport):
        super().__init__(
            f"{report.errors}/{report.samples} samples failed; see report.error_log"
        )
        self.report = report


class ImageCache:
    """Read-mostly decoded-image cache, safe for concurrent readers.

    Arrays handed out are shared and must be treated as immutable.
    """

    def __init__(self, images: Mapping[int, ImageRecord], max_items: int = 512):
        self._images = images
        self._max_items = max_items
        self._lock = threading.Lock()
        self._cache: Dict[int, np.ndarray] = {}

    def get(self, image_id: int) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(image_id)
        if cached is not None:
            return cached
        record = self._images.get(image_id)
        if record is None:
            raise ComposeError(image_id, "not in dataset")
        try:
            with Image.open(record.path) as img:
                array = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except OSError as e:
            raise ComposeError(image_id, f"unreadable image file: {e}") from e
        with self._lock:
            if len(self._cache) >= self._max_items:
                self._cache.pop(next(iter(self._cache)))
            self._cache[image_id] = array
        return array


def gate_draw(master_seed: int, sample_id) -> float:
    """The uniform [0, 1) variate behind the augment-or-not decision."""
    return derive_sample_rng(master_seed, sample_id).random()


def should_augment(master_seed: int, sample_id, gamma: float) -> bool:
    return gate_draw(master_seed, sample_id) < gamma


# Outcome tags for one processed sample.
AUGMENTED = "augmented"
PASSED = "passed_through"
POOL_TOO_SMALL = "pool_too_small"
ERROR = "error"


def _process_sample(
    sample: ReferringSample,
    store: EmbeddingStore,
    config: PipelineConfig,
    cache: ImageCache,
) -> Tuple[str, Union[AugmentedSample, ReferringSample], Optional[str]]:
    rng = derive_sample_rng(config.master_seed, sample.sample_id)
    if rng.random() >= config.gamma:
        return PASSED, sample, None
    try:
        pool = build_pool(store, sample, config.mining)
    except PoolTooSmallError as e:
        return POOL_TOO_SMALL, sample, str(e)
    try:
        selection = select_negatives(pool, rng)
        plan = plan_mosaic(sample, selection.negatives, config.compositor, rng)
        positive = cache.get(sample.image_id)
        negatives = [cache.get(i) for i in selection.negatives]
        provenance = {
            "augmented": True,
            "source_sample_id": sample.sample_id,
            "source_image_id": sample.image_id,
            "negative_image_ids": list(selection.negatives),
            "quadrant": plan.positive_quadrant,
            "cross_point": list(plan.cross_point),
            "matched_keywords": list(plan.matched_keywords),
            "constraint_fallback": plan.constraint_fallback,
            "seed": config.master_seed,
            "sample_seed": rng.seed,
            **config.echo(),
        }
        aug = compose(sample, positive, negatives, plan, provenance)
        if not aug.mask.any():
            # A tiny mask can vanish under nearest-neighbor downscale; an
            # empty label is useless, so keep the original sample instead.
            return ERROR, sample, "composed mask is empty"
        return AUGMENTED, aug, None
    except ComposeError as e:
        return ERROR, sample, str(e)


def validate_coverage(
    images: Sequence[ImageRecord],
    samples: Sequence[ReferringSample],
    store: EmbeddingStore,
) -> None:
    missing_images = [rec.image_id for rec in images if not store.has_image(rec.image_id)]
    missing_texts = [s.sample_id for s in samples if not store.has_text(s.sample_id)]
    if missing_images or missing_texts:
        raise ValueError(
            f"embeddings do not cover the dataset: {len(missing_images)} image ids, "
            f"{len(missing_texts)} sample ids missing"
        )


def run(
    images: Sequence[ImageRecord],
    samples: Sequence[ReferringSample],
    store: EmbeddingStore,
    config: PipelineConfig,
    out_dir: Union[str, Path],
    dump_previews: int = 0,
) -> RunReport:
    """Process every sample, write the output dataset, return the report."""
    started = time.perf_counter()
    validate_coverage(images, samples, store)
    images_by_id = {rec.image_id: rec for rec in images}
    cache = ImageCache(images_by_id)
    report = RunReport(samples=len(samples), config=config.echo())

    stage_start = time.perf_counter()
    outcomes: List[Tuple[str, Union[AugmentedSample, ReferringSample], Optional[str]]] = []
    if config.worker_count == 1:
        for sample in samples:
            outcomes.append(_process_sample(sample, store, config, cache))
    else:
        # Bounded in-order submission keeps memory flat and output order
        # identical to the single-worker run.
        window = max(32, 4 * config.worker_count)
        with ThreadPoolExecutor(max_workers=config.worker_count) as executor:
            pending = []
            for sample in samples:
                pending.append(executor.submit(_process_sample, sample, store, config, cache))
                if len(pending) >= window:
                    outcomes.append(pending.pop(0).result())
            outcomes.extend(f.result() for f in pending)
    report.stage_seconds["process"] = time.perf_counter() - stage_start

    records: List[Union[AugmentedSample, ReferringSample]] = []
    for tag, record, message in outcomes:
        records.append(record)
        if tag == AUGMENTED:
            report.augmented += 1
            if record.plan.constraint_fallback:
                report.constraint_fallbacks += 1
        elif tag == PASSED:
            report.passed_through += 1
        elif tag == POOL_TOO_SMALL:
            report.pool_too_small += 1
        else:
            report.errors += 1
            report.error_log.append({"sample_id": record.sample_id, "error": message})

    stage_start = time.perf_counter()
    out_dir = Path(out_dir)
    write_augmented(records, images_by_id, out_dir, config_echo=config.echo())
    report.stage_seconds["write"] = time.perf_counter() - stage_start

    if dump_previews > 0:
        preview_dir = out_dir / "previews"
        preview_dir.mkdir(parents=True, exist_ok=True)
        remaining = dump_previews
        for tag, record, _ in outcomes:
            if remaining == 0:
                break
            if tag == AUGMENTED:
                Image.fromarray(render_preview(record)).save(
                    preview_dir / f"preview_{record.sample_id}.png"
                )
                remaining -= 1

    report.wall_time_s = time.perf_counter() - started
    if report.errors > 0.01 * max(report.samples, 1):
        raise PipelineError(report)
    return report
