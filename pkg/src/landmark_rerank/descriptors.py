"""Global descriptor math: pooling operators, whitening, and ranking losses.

A feature map is an (H, W, C) array of activations; every pooling operator
reduces it to a C-vector. Whitening is fit on a matrix of descriptors (one
per row) and applied per vector. All functions here are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Default attenuation exponent for whitening: 1.0 is classical PCA
# whitening, 0.0 a pure rotation.
DEFAULT_ATTENUATION = 0.5

# Default generalized-mean exponent when none is given.
DEFAULT_GEM_P = 3.0

# Eigenvalues below this fraction of the largest count as rank deficiency.
EIGENVALUE_FLOOR = 1e-10

# Target overlap fraction between neighboring regional-max regions.
REGION_OVERLAP = 0.4


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot l2-normalize a zero vector")
    return v / norm


def _check_feature_map(fmap: np.ndarray) -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise ValueError(f"feature map must be (H, W, C), got shape {fmap.shape}")
    if not np.isfinite(fmap).all():
        raise ValueError("feature map contains non-finite values")
    return fmap


def gem_pool(fmap: np.ndarray, p: float = DEFAULT_GEM_P) -> np.ndarray:
    """Generalized-mean pooling: per channel, ((1/(H*W)) * sum(x^p))^(1/p).

    p=1 is mean pooling (SPoC) and p -> infinity approaches max pooling
    (MAC). Non-integer p requires non-negative activations.
    """
    fmap = _check_feature_map(fmap)
    if p < 1:
        raise ValueError(f"gem exponent must be >= 1, got {p}")
    is_integer_p = float(p).is_integer()
    if not is_integer_p and (fmap < 0).any():
        raise ValueError("negative activations require an integer gem exponent")
    flat = fmap.reshape(-1, fmap.shape[2])
    # Factor out the per-channel max magnitude so large p stays stable.
    peak = np.abs(flat).max(axis=0)
    out = np.zeros(fmap.shape[2], dtype=np.float64)
    live = peak > 0
    if live.any():
        scaled = flat[:, live] / peak[live]
        mean_p = np.mean(scaled**p, axis=0)
        # Signed root handles odd integer p on maps with negative values.
        out[live] = peak[live] * np.copysign(np.abs(mean_p) ** (1.0 / p), mean_p)
    return out


def spoc_pool(fmap: np.ndarray) -> np.ndarray:
    """Per-channel mean pooling."""
    return gem_pool(fmap, 1.0)


def mac_pool(fmap: np.ndarray) -> np.ndarray:
    """Per-channel max pooling."""
    fmap = _check_feature_map(fmap)
    return fmap.reshape(-1, fmap.shape[2]).max(axis=0)


def region_grid(height: int, width: int, levels: int) -> list[tuple[int, int, int]]:
    """Square regions (top, left, side) for regional-max pooling.

    At level l (1-based) the region side is 2*min(H, W)/(l+1), floored and
    clamped to at least 1 cell. Regions are placed uniformly along each
    axis with the number of positions chosen so that the overlap between
    neighbors is closest to REGION_OVERLAP; ties prefer fewer regions.
    """
    regions = []
    for level in range(1, levels + 1):
        side = max(1, int(2 * min(height, width) / (level + 1)))
        rows = _axis_positions(height, side)
        cols = _axis_positions(width, side)
        regions.extend((r, c, side) for r in rows for c in cols)
    return regions


def _axis_positions(extent: int, side: int) -> list[int]:
    span = extent - side
    if span <= 0:
        return [0]
    best_count = 2
    best_gap = None
    for count in range(2, span + 2):
        step = span / (count - 1)
        overlap = 1.0 - step / side
        gap = abs(overlap - REGION_OVERLAP)
        if best_gap is None or gap < best_gap:
            best_gap = gap
            best_count = count
        if overlap >= 1.0:
            break
    return [int(np.floor(i * span / (best_count - 1))) for i in range(best_count)]


def rmac_pool(fmap: np.ndarray, levels: int = 3) -> np.ndarray:
    """Regional-max pooling: per-region MAC, per-region l2 normalization,
    sum over regions, final l2 normalization."""
    fmap = _check_feature_map(fmap)
    height, width, channels = fmap.shape
    total = np.zeros(channels, dtype=np.float64)
    for top, left, side in region_grid(height, width, levels):
        patch = fmap[top : top + side, left : left + side]
        mac = patch.reshape(-1, channels).max(axis=0)
        norm = np.linalg.norm(mac)
        if norm > 0:
            total += mac / norm
    return l2_normalize(total)


def concat_descriptors(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate descriptors and l2-normalize the result."""
    if not parts:
        raise ValueError("need at least one descriptor to concatenate")
    stacked = np.concatenate([np.asarray(p, dtype=np.float64).ravel() for p in parts])
    if not np.isfinite(stacked).all():
        raise ValueError("descriptor parts contain non-finite values")
    return l2_normalize(stacked)


def multiscale_aggregate(descs: list[np.ndarray]) -> np.ndarray:
    """Sum-aggregate the three per-scale descriptors and l2-normalize."""
    if len(descs) != 3:
        raise ValueError(f"expected 3 per-scale descriptors, got {len(descs)}")
    arrays = [np.asarray(d, dtype=np.float64) for d in descs]
    dims = {a.shape for a in arrays}
    if len(dims) != 1:
        raise ValueError(f"per-scale descriptors disagree on dimension: {dims}")
    return l2_normalize(arrays[0] + arrays[1] + arrays[2])


@dataclass(eq=False)
class WhiteningModel:
    """Mean, eigenbasis, and eigenvalues of a fitted whitening transform.

    ``basis`` holds orthonormal eigenvector columns; ``eigenvalues`` are
    the matching sample-covariance eigenvalues, sorted descending. The
    attenuation exponent t scales component i by eigenvalues[i]**(-t/2).
    """

    mean: np.ndarray         # (d,)
    basis: np.ndarray        # (d, m), orthonormal columns
    eigenvalues: np.ndarray  # (m,), descending, all > 0
    t: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"attenuation exponent must be in [0, 1], got {self.t}")
        if (np.diff(self.eigenvalues) > 0).any() or (self.eigenvalues <= 0).any():
            raise ValueError("eigenvalues must be positive and sorted descending")

    @property
    def in_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def out_dim(self) -> int:
        return self.basis.shape[1]


def fit_auw(data: np.ndarray, t: float = DEFAULT_ATTENUATION,
            out_dim: int | None = None) -> WhiteningModel:
    """Fit attenuated whitening on rows of ``data``.

    Eigendecomposes the sample covariance (n-1 denominator) and keeps the
    top ``out_dim`` eigenpairs. Eigenvalues below EIGENVALUE_FLOOR times
    the largest are treated as rank deficiency.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("whitening data must be a 2-D matrix")
    n, d = data.shape
    if out_dim is None:
        out_dim = d
    if not 1 <= out_dim <= d:
        raise ValueError(f"out_dim must be in [1, {d}], got {out_dim}")
    if n <= out_dim:
        raise ValueError(f"need more than {out_dim} samples, got {n}")
    if not np.isfinite(data).all():
        raise ValueError("whitening data contains non-finite values")
    mean = data.mean(axis=0)
    centered = data - mean
    cov = centered.T @ centered / (n - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    floor = EIGENVALUE_FLOOR * max(eigenvalues[0], 0.0)
    effective_rank = int((eigenvalues > floor).sum())
    if effective_rank < out_dim:
        raise ValueError(
            f"data has effective rank {effective_rank}, cannot keep {out_dim} components"
        )
    basis = eigenvectors[:, :out_dim]
    # Fix eigenvector signs for cross-platform determinism.
    anchor = np.abs(basis).argmax(axis=0)
    signs = np.sign(basis[anchor, np.arange(out_dim)])
    basis = basis * signs
    return WhiteningModel(mean, basis, eigenvalues[:out_dim], t)


def apply_auw(model: WhiteningModel, v: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Project, attenuate, and (by default) l2-normalize one descriptor."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.in_dim,):
        raise ValueError(f"expected a {model.in_dim}-vector, got shape {v.shape}")
    projected = model.basis.T @ (v - model.mean)
    attenuated = projected * model.eigenvalues ** (-model.t / 2.0)
    if not normalize:
        return attenuated
    return l2_normalize(attenuated)


def contrastive_loss(a: np.ndarray, b: np.ndarray, is_positive: bool,
                     margin: float) -> float:
    """Pair loss: positives 0.5*d^2, negatives 0.5*max(0, margin - d)^2."""
    if margin <= 0:
        raise ValueError(f"contrastive margin must be > 0, got {margin}")
    distance = float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))
    if is_positive:
        return 0.5 * distance * distance
    slack = max(0.0, margin - distance)
    return 0.5 * slack * slack


def triplet_loss(query: np.ndarray, positive: np.ndarray, negative: np.ndarray,
                 margin: float) -> float:
    """Triplet loss on squared distances: max(0, m + d(q,p)^2 - d(q,n)^2)."""
    q = np.asarray(query, dtype=np.float64)
    d_pos = float(np.sum((q - np.asarray(positive, float)) ** 2))
    d_neg = float(np.sum((q - np.asarray(negative, float)) ** 2))
    return max(0.0, margin + d_pos - d_neg)


@dataclass(frozen=True)
class TrainingTuple:
    """A query, one matching positive, and exactly five hard negatives."""

    query: np.ndarray
    positive: np.ndarray
    negatives: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.negatives) != 5:
            raise ValueError(f"expected exactly 5 negatives, got {len(self.negatives)}")


def expand_tuple(tup: TrainingTuple, contrastive_margin: float,
                 triplet_margin: float) -> tuple[list[float], list[float], float]:
    """Expand a tuple into its 6 pair losses and 5 triplet losses.

    Pairs are (query, positive) plus (query, negative_i); triplets are
    (query, positive, negative_i). Returns (pair_losses, triplet_losses,
    total) where total is the plain sum of all 11 terms.
    """
    pair_losses = [contrastive_loss(tup.query, tup.positive, True, contrastive_margin)]
    pair_losses.extend(
        contrastive_loss(tup.query, n, False, contrastive_margin) for n in tup.negatives
    )
    trip_losses = [
        triplet_loss(tup.query, tup.positive, n, triplet_margin) for n in tup.negatives
    ]
    return pair_losses, trip_losses, sum(pair_losses) + sum(trip_losses)
