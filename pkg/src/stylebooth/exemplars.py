"""Training-exemplar selection within a style subset.

Every image in a subset gets a candidate list of the other in-class images
ranked by embedding cosine similarity; training draws uniformly from the top
of that list, never returning the image itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backends import ImageEncoder
from .errors import DataValidationError


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 0)


@dataclass(frozen=True)
class ExemplarIndex:
    """Pairwise similarities and per-image descending candidate rankings."""

    ids: tuple[str, ...]
    similarities: np.ndarray  # [n, n] cosine matrix
    candidates: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for image_id, ranked in self.candidates.items():
            if image_id in ranked:
                raise DataValidationError(f"{image_id!r} appears in its own candidate list")


def rank_exemplars(embeddings: dict[str, np.ndarray]) -> ExemplarIndex:
    """Build the full pairwise-cosine index for one style subset.

    Ties are broken by the order ids were supplied, so the ranking is
    reproducible for degenerate (identical-embedding) subsets.
    """
    if len(embeddings) < 2:
        raise DataValidationError(
            f"need at least 2 images to pick exemplars, got {len(embeddings)}"
        )
    ids = tuple(embeddings)
    mat = _normalize_rows(np.stack([np.asarray(embeddings[i], dtype=np.float64) for i in ids]))
    sims = mat @ mat.T
    candidates: dict[str, tuple[str, ...]] = {}
    for row, image_id in enumerate(ids):
        order = sorted(
            (j for j in range(len(ids)) if j != row),
            key=lambda j: (-sims[row, j], j),
        )
        candidates[image_id] = tuple(ids[j] for j in order)
    return ExemplarIndex(ids=ids, similarities=sims, candidates=candidates)


def build_index(images: dict[str, np.ndarray], backend: ImageEncoder) -> ExemplarIndex:
    return rank_exemplars({i: backend.embed_image(img) for i, img in images.items()})


def sample_exemplar(
    index: ExemplarIndex, image_id: str, k: int = 10, rng: np.random.Generator | None = None
) -> str:
    """Uniform draw from the top-min(k, n-1) most similar in-class images."""
    if image_id not in index.candidates:
        raise DataValidationError(f"unknown image id {image_id!r}")
    rng = rng or np.random.default_rng()
    pool = index.candidates[image_id][: max(1, k)]
    return pool[int(rng.integers(len(pool)))]


def save_index(index: ExemplarIndex, path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in index.ids:
            fh.write(
                json.dumps({"image": image_id, "candidates": list(index.candidates[image_id])})
                + "\n"
            )
    return path


def load_index(path: str) -> dict[str, tuple[str, ...]]:
    """Candidate lists only (similarity matrices are not persisted)."""
    out: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["image"]] = tuple(rec["candidates"])
    return out
