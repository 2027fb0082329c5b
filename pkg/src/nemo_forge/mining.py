"""Two-bound negative mining: upper-bound filter, top-K ranking, random 3.

Candidates that look too much like the query are cut by the upper bound
(score >= tau is excluded, strict boundary), the survivors are ranked and
truncated to the K best, and three distinct negatives are drawn uniformly
from that pool.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .embeddings import EmbeddingStore
from .rng import SplitMix64


class MiningMode(str, enum.Enum):
    # Upper bound and ranking both use text-to-image relevance.
    T2I_ONLY = "t2i"
    # Upper bound uses image-to-image relevance vs the positive image,
    # ranking uses text-to-image relevance; requires two sorts of scores.
    I2I_UPPER_T2I_LOWER = "i2i-upper"
    # Drop a candidate if either relevance exceeds its own threshold.
    DUAL = "dual"
    # No filter, no ranking: every other image is a candidate.
    UNIFORM = "uniform"


@dataclass(frozen=True)
class MiningConfig:
    tau: Optional[float] = 0.75
    k: int = 200
    mode: MiningMode = MiningMode.I2I_UPPER_T2I_LOWER
    tau_t2i: Optional[float] = None
    tau_i2i: Optional[float] = None

    def __post_init__(self):
        if self.k < 3:
            raise ValueError(f"k must be >= 3, got {self.k}")
        for name, value in (("tau", self.tau), ("tau_t2i", self.tau_t2i), ("tau_i2i", self.tau_i2i)):
            if value is not None and not -1.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {value}")
        if self.mode == MiningMode.DUAL and (self.tau_t2i is None or self.tau_i2i is None):
            raise ValueError("dual mode requires both tau_t2i and tau_i2i")


@dataclass
class NegativePool:
    sample_id: int
    pool: List[int]
    excluded_upper: int


@dataclass
class NegativeSelection:
    sample_id: int
    negatives: Tuple[int, int, int]
    rng_seed_used: int


class PoolTooSmallError(Exception):
    """Fewer than 3 candidates survived; the caller decides the fallback."""

    def __init__(self, sample_id: int, survivor_count: int):
        super().__init__(
            f"sample {sample_id}: only {survivor_count} candidates survive filtering"
        )
        self.sample_id = sample_id
        self.survivor_count = survivor_count


def _ranked(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # Descending score; equal scores break ties by ascending image_id so the
    # ranking is a total order.
    order = np.lexsort((ids, -scores.astype(np.float64)))
    return ids[order]


def build_pool(store: EmbeddingStore, sample, config: MiningConfig) -> NegativePool:
    """Filter-then-rank the candidate images for one sample.

    ``sample`` needs ``sample_id`` and ``image_id`` attributes. The sample's
    own image is removed before any bound applies.
    """
    ids = np.asarray(store.image_ids, dtype=np.int64)
    keep = ids != sample.image_id
    ids = ids[keep]

    if config.mode == MiningMode.UNIFORM:
        pool = [int(i) for i in ids]
        if len(pool) < 3:
            raise PoolTooSmallError(sample.sample_id, len(pool))
        return NegativePool(sample_id=sample.sample_id, pool=pool, excluded_upper=0)

    t2i = store.text_scores(sample.sample_id)[keep]
    if config.mode == MiningMode.T2I_ONLY:
        survive = np.ones(len(ids), dtype=bool)
        if config.tau is not None:
            survive = t2i < config.tau
    elif config.mode == MiningMode.I2I_UPPER_T2I_LOWER:
        i2i = store.image_scores(sample.image_id)[keep]
        survive = np.ones(len(ids), dtype=bool)
        if config.tau is not None:
            survive = i2i < config.tau
    elif config.mode == MiningMode.DUAL:
        i2i = store.image_scores(sample.image_id)[keep]
        survive = (t2i < config.tau_t2i) & (i2i < config.tau_i2i)
    else:
        raise ValueError(f"unknown mining mode {config.mode!r}")

    excluded = int(len(ids) - survive.sum())
    survivors = ids[survive]
    if len(survivors) < 3:
        raise PoolTooSmallError(sample.sample_id, len(survivors))
    ranked = _ranked(survivors, t2i[survive])
    pool = [int(i) for i in ranked[: config.k]]
    return NegativePool(sample_id=sample.sample_id, pool=pool, excluded_upper=excluded)


def select_negatives(pool: NegativePool, rng: SplitMix64) -> NegativeSelection:
    """Draw 3 distinct negatives uniformly via a partial Fisher-Yates shuffle."""
    if len(pool.pool) < 3:
        raise PoolTooSmallError(pool.sample_id, len(pool.pool))
    picked = rng.partial_shuffle(pool.pool, 3)
    return NegativeSelection(
        sample_id=pool.sample_id,
        negatives=(picked[0], picked[1], picked[2]),
        rng_seed_used=rng.seed,
    )
