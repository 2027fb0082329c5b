"""Row-aligned unit-norm image and text embeddings plus relevance queries.

The store is an exact full-scan index: relevance is the plain dot product
of unit vectors (equal to cosine similarity, bounded in [-1, 1]). Scores
are accumulated in float64 and reported in float32 to match the storage
precision of the embedding file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

MAGIC = b"NEMOEMB1"
_HEADER = struct.Struct("<8sIII")
UNIT_NORM_TOL = 1e-5


class EmbeddingFormatError(ValueError):
    """Structural problem with an embedding file (magic, sizes, truncation)."""


class EmbeddingValidationError(ValueError):
    """File parses but violates a store invariant (norms, duplicate ids)."""


class UnknownIdError(KeyError):
    """Query id has no row in the store."""


@dataclass
class RelevanceScore:
    image_id: int
    score: float


@dataclass
class EmbeddingStore:
    dim: int
    image_ids: List[int]
    image_matrix: np.ndarray  # (n_images, dim) float32, unit rows
    sample_ids: List[int]
    text_matrix: np.ndarray  # (n_texts, dim) float32, unit rows
    _image_row: Dict[int, int] = field(init=False, repr=False)
    _text_row: Dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._image_row = {iid: i for i, iid in enumerate(self.image_ids)}
        self._text_row = {sid: i for i, sid in enumerate(self.sample_ids)}
        if len(self._image_row) != len(self.image_ids):
            raise EmbeddingValidationError("duplicate image_id in store")
        if len(self._text_row) != len(self.sample_ids):
            raise EmbeddingValidationError("duplicate sample_id in store")

    def __len__(self) -> int:
        return len(self.image_ids)

    def has_image(self, image_id: int) -> bool:
        return image_id in self._image_row

    def has_text(self, sample_id: int) -> bool:
        return sample_id in self._text_row

    def image_row_index(self, image_id: int) -> int:
        try:
            return self._image_row[image_id]
        except KeyError:
            raise UnknownIdError(f"image_id {image_id} not in store") from None

    def text_scores(self, sample_id: int) -> np.ndarray:
        """Text-to-image scores against every image row, in store order."""
        try:
            row = self._text_row[sample_id]
        except KeyError:
            raise UnknownIdError(f"sample_id {sample_id} has no text row") from None
        return _scores(self.image_matrix, self.text_matrix[row])

    def image_scores(self, image_id: int) -> np.ndarray:
        """Image-to-image scores against every image row (self included)."""
        return _scores(self.image_matrix, self.image_matrix[self.image_row_index(image_id)])


def _scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    # float64 accumulation, float32 result: deterministic and well inside
    # the 1e-6 agreement bound against a naive sequential dot product.
    return (matrix.astype(np.float64) @ query.astype(np.float64)).astype(np.float32)


def text_to_image_scores(store: EmbeddingStore, sample_id: int) -> List[RelevanceScore]:
    raw = store.text_scores(sample_id)
    return [RelevanceScore(iid, float(s)) for iid, s in zip(store.image_ids, raw)]


def image_to_image_scores(store: EmbeddingStore, image_id: int) -> List[RelevanceScore]:
    raw = store.image_scores(image_id)
    return [RelevanceScore(iid, float(s)) for iid, s in zip(store.image_ids, raw)]


def _check_unit_rows(matrix: np.ndarray, ids: Sequence[int], kind: str) -> None:
    if matrix.size == 0:
        return
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
    if bad.size:
        i = int(bad[0])
        raise EmbeddingValidationError(
            f"{kind} row {i} (id {ids[i]}) has norm {norms[i]:.8f}, "
            f"outside 1 +/- {UNIT_NORM_TOL}"
        )


def load_embeddings(path: Union[str, Path]) -> EmbeddingStore:
    """Parse and validate an embedding file (see :func:`save_embeddings`).

    Rows are kept byte-for-byte as stored; a row whose norm deviates from 1
    by more than 1e-5 is rejected with the offending row named, never
    silently renormalized.
    """
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(f"file too short for header: {len(blob)} bytes")
    magic, dim, n_images, n_texts = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if dim <= 0:
        raise EmbeddingFormatError(f"dim must be positive, got {dim}")
    expected = _HEADER.size + 8 * (n_images + n_texts) + 4 * dim * (n_images + n_texts)
    if len(blob) != expected:
        raise EmbeddingFormatError(
            f"payload size {len(blob)} != expected {expected} "
            f"(dim={dim}, n_images={n_images}, n_texts={n_texts})"
        )
    off = _HEADER.size
    image_ids = np.frombuffer(blob, dtype="<u8", count=n_images, offset=off)
    off += 8 * n_images
    sample_ids = np.frombuffer(blob, dtype="<u8", count=n_texts, offset=off)
    off += 8 * n_texts
    image_matrix = np.frombuffer(blob, dtype="<f4", count=n_images * dim, offset=off)
    off += 4 * n_images * dim
    text_matrix = np.frombuffer(blob, dtype="<f4", count=n_texts * dim, offset=off)
    image_matrix = image_matrix.reshape(n_images, dim).copy()
    text_matrix = text_matrix.reshape(n_texts, dim).copy()
    if not (np.isfinite(image_matrix).all() and np.isfinite(text_matrix).all()):
        raise EmbeddingValidationError("non-finite value in embedding matrix")
    ids_i = [int(x) for x in image_ids]
    ids_t = [int(x) for x in sample_ids]
    _check_unit_rows(image_matrix, ids_i, "image")
    _check_unit_rows(text_matrix, ids_t, "text")
    return EmbeddingStore(
        dim=int(dim),
        image_ids=ids_i,
        image_matrix=image_matrix,
        sample_ids=ids_t,
        text_matrix=text_matrix,
    )


def save_embeddings(store: EmbeddingStore, path: Union[str, Path]) -> None:
    """Write the binary layout: magic | u32 dim | u32 n_images | u32 n_texts |
    image ids (u64) | sample ids (u64) | image rows (f32) | text rows (f32),
    all little-endian."""
    parts = [_HEADER.pack(MAGIC, store.dim, len(store.image_ids), len(store.sample_ids))]
    parts.append(np.asarray(store.image_ids, dtype="<u8").tobytes())
    parts.append(np.asarray(store.sample_ids, dtype="<u8").tobytes())
    parts.append(np.ascontiguousarray(store.image_matrix, dtype="<f4").tobytes())
    parts.append(np.ascontiguousarray(store.text_matrix, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize rows to float32; zero rows are rejected."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("cannot normalize a zero vector")
    return (matrix / norms).astype(np.float32)
