"""Negative-mined mosaic augmentation for referring-segmentation datasets."""

from .dataset import (
    DatasetFormatError,
    DatasetIntegrityError,
    ImageRecord,
    ReferringSample,
    load_dataset,
    make_sample_id,
    split_sample_id,
    write_augmented,
)
from .embeddings import (
    EmbeddingFormatError,
    EmbeddingStore,
    EmbeddingValidationError,
    RelevanceScore,
    image_to_image_scores,
    load_embeddings,
    save_embeddings,
    text_to_image_scores,
    unit_rows,
)
from .masks import SegmentationMask, decode_mask, encode_bitmap, mask_bbox
from .mining import (
    MiningConfig,
    MiningMode,
    NegativePool,
    NegativeSelection,
    PoolTooSmallError,
    build_pool,
    select_negatives,
)
from .mosaic import (
    AugmentedSample,
    CompositorConfig,
    CrossPointPolicy,
    Grid,
    MosaicPlan,
    compose,
    plan_mosaic,
)
from .pipeline import PipelineConfig, RunReport, run, should_augment
from .rng import SplitMix64, derive_sample_rng

__version__ = "0.1.0"
