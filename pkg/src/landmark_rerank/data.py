"""Core value types shared by every pipeline stage.

All types are immutable by convention after construction and safe to share
across worker threads. Ranking of submissions is a total, deterministic
order: descending confidence, ties broken by ascending image id, and rows
with an empty guess always rank below every non-empty one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


def validate_image_id(image_id: str) -> str:
    """Check an image id: non-empty, no commas, no whitespace."""
    if not image_id:
        raise ValueError("image id must be non-empty")
    if "," in image_id or any(c.isspace() for c in image_id):
        raise ValueError(f"image id {image_id!r} contains a comma or whitespace")
    return image_id


@dataclass(frozen=True)
class Prediction:
    """One submission row: an image with an optional (label, confidence) guess."""

    image: str
    label: int | None = None
    confidence: float | None = None

    def __post_init__(self) -> None:
        validate_image_id(self.image)
        if (self.label is None) != (self.confidence is None):
            raise ValueError(
                f"prediction for {self.image!r} must set label and confidence together"
            )
        if self.label is not None:
            if self.label < 0:
                raise ValueError(f"negative class label for {self.image!r}")
            if not np.isfinite(self.confidence):
                raise ValueError(f"non-finite confidence for {self.image!r}")

    @property
    def has_guess(self) -> bool:
        return self.label is not None


def _rank_key(p: Prediction) -> tuple:
    if p.label is None:
        return (1, 0.0, p.image)
    return (0, -p.confidence, p.image)


@dataclass
class Submission:
    """Ordered list of predictions, one per test image, ids unique."""

    rows: list[Prediction]

    def __post_init__(self) -> None:
        seen = set()
        for p in self.rows:
            if p.image in seen:
                raise ValueError(f"duplicate image id {p.image!r} in submission")
            seen.add(p.image)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[Prediction]:
        return iter(self.rows)

    def ids(self) -> set[str]:
        return {p.image for p in self.rows}

    def by_id(self) -> dict[str, Prediction]:
        return {p.image: p for p in self.rows}

    def ranked_rows(self) -> list[Prediction]:
        """Rows in ranked order: confidence desc, id asc, empty guesses last."""
        return sorted(self.rows, key=_rank_key)

    def ranked(self) -> "Submission":
        return Submission(self.ranked_rows())


@dataclass(eq=False)
class DescriptorStore:
    """Id-indexed matrix of fixed-dimension global descriptors.

    Iteration order equals construction (and on-disk) order; ids are unique.
    """

    ids: list[str]
    matrix: np.ndarray  # (count, dim) float32, row i belongs to ids[i]
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.matrix = np.ascontiguousarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise ValueError("descriptor matrix must be 2-D")
        if self.matrix.shape[0] != len(self.ids):
            raise ValueError(
                f"store has {len(self.ids)} ids but {self.matrix.shape[0]} rows"
            )
        if self.matrix.size and not np.isfinite(self.matrix).all():
            raise ValueError("descriptor matrix contains non-finite values")
        self._index = {}
        for i, image_id in enumerate(self.ids):
            validate_image_id(image_id)
            if image_id in self._index:
                raise ValueError(f"duplicate image id {image_id!r} in store")
            self._index[image_id] = i

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._index

    def row(self, image_id: str) -> int:
        try:
            return self._index[image_id]
        except KeyError:
            raise KeyError(f"no descriptor for image {image_id!r}") from None

    def vector(self, image_id: str) -> np.ndarray:
        return self.matrix[self.row(image_id)]

    def subset(self, ids: list[str]) -> "DescriptorStore":
        rows = [self.row(i) for i in ids]
        return DescriptorStore(list(ids), self.matrix[rows].copy())


@dataclass(eq=False)
class LocalFeatureSet:
    """Keypoints (x, y, scale) with local descriptors for one image."""

    image: str
    xy: np.ndarray           # (n, 2) float64 pixel coordinates
    scale: np.ndarray        # (n,) float64, all > 0
    descriptors: np.ndarray  # (n, desc_dim) float32

    def __post_init__(self) -> None:
        validate_image_id(self.image)
        self.xy = np.ascontiguousarray(self.xy, dtype=np.float64)
        self.scale = np.ascontiguousarray(self.scale, dtype=np.float64)
        self.descriptors = np.ascontiguousarray(self.descriptors, dtype=np.float32)
        n = self.xy.shape[0]
        if self.xy.ndim != 2 or self.xy.shape[1] != 2:
            raise ValueError(f"xy must be (n, 2), got {self.xy.shape}")
        if self.scale.shape != (n,) or self.descriptors.shape[0] != n:
            raise ValueError(f"inconsistent feature counts for {self.image!r}")
        if self.descriptors.ndim != 2:
            raise ValueError("descriptors must be 2-D")
        if n:
            if not (np.isfinite(self.xy).all() and np.isfinite(self.descriptors).all()):
                raise ValueError(f"non-finite feature data for {self.image!r}")
            if not np.isfinite(self.scale).all() or (self.scale <= 0).any():
                raise ValueError(f"scales must be finite and > 0 for {self.image!r}")

    @property
    def desc_dim(self) -> int:
        return self.descriptors.shape[1]

    def __len__(self) -> int:
        return self.xy.shape[0]
