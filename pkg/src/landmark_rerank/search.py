"""Exact global descriptor search and class-score aggregation.

The search is a brute-force cosine scan, blocked into query x train tiles
for cache efficiency. Selection inside a tile keeps every candidate whose
blocked score reaches the per-query k-th best (minus a tolerance that only
ever widens the candidate set), and final similarities are recomputed per
pair with a fixed-order float64 dot product. Results are therefore
bit-identical for any tiling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DescriptorStore, Prediction, Submission
from .io import ParseError

DEFAULT_K_STORE = 10
DEFAULT_K_AGGREGATE = 5
DEFAULT_TILE_QUERIES = 1024
DEFAULT_TILE_TRAIN = 8192

NEIGHBORS_HEADER = "query,rank,train,similarity"

# Widens tile-local candidate selection; large against float64 matmul
# noise, small against any real score gap we care about.
_SELECT_SLACK = 1e-9


@dataclass
class NeighborList:
    """Ranked train-set neighbors of one query, best first."""

    query: str
    neighbors: list[tuple[str, float]]  # (train id, similarity), sim desc, id asc


def knn_search(test: DescriptorStore, train: DescriptorStore, k: int = DEFAULT_K_STORE,
               tile_queries: int = DEFAULT_TILE_QUERIES,
               tile_train: int = DEFAULT_TILE_TRAIN) -> list[NeighborList]:
    """Exact top-k neighbors of every test descriptor by dot product.

    Ordering is (similarity desc, train id asc); output follows test store
    order. k is truncated to the train store size.
    """
    if test.dim != train.dim:
        raise ValueError(f"dimension mismatch: test {test.dim} vs train {train.dim}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if tile_queries < 1 or tile_train < 1:
        raise ValueError("tile sizes must be >= 1")
    n_train = len(train)
    k_eff = min(k, n_train)
    results: list[NeighborList] = []
    if n_train == 0:
        return [NeighborList(q, []) for q in test.ids]

    for q_start in range(0, len(test), tile_queries):
        q_block = test.matrix[q_start : q_start + tile_queries].astype(np.float64)
        candidates: list[list[int]] = [[] for _ in range(q_block.shape[0])]
        for t_start in range(0, n_train, tile_train):
            t_block = train.matrix[t_start : t_start + tile_train].astype(np.float64)
            scores = q_block @ t_block.T
            kk = min(k_eff, t_block.shape[0])
            # k-th largest score per query row within this tile.
            thresh = np.partition(scores, scores.shape[1] - kk, axis=1)[:, scores.shape[1] - kk]
            keep = scores >= (thresh - _SELECT_SLACK)[:, None]
            for row, cols in enumerate(keep):
                candidates[row].extend((t_start + c) for c in np.nonzero(cols)[0])
        for row in range(q_block.shape[0]):
            query_vec = q_block[row]
            scored = []
            for col in candidates[row]:
                sim = float(query_vec @ train.matrix[col].astype(np.float64))
                scored.append((sim, train.ids[col]))
            scored.sort(key=lambda pair: (-pair[0], pair[1]))
            results.append(
                NeighborList(
                    test.ids[q_start + row],
                    [(tid, sim) for sim, tid in scored[:k_eff]],
                )
            )
    return results


def save_neighbor_lists(neighbor_lists: list[NeighborList], path: str) -> None:
    lines = [NEIGHBORS_HEADER]
    for nl in neighbor_lists:
        for rank, (train_id, sim) in enumerate(nl.neighbors, start=1):
            lines.append(f"{nl.query},{rank},{train_id},{sim!r}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def load_neighbor_lists(path: str) -> list[NeighborList]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != NEIGHBORS_HEADER:
        raise ParseError(path, 1, f"expected header {NEIGHBORS_HEADER!r}")
    results: list[NeighborList] = []
    current: NeighborList | None = None
    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != 4:
            raise ParseError(path, line_no, f"expected 4 fields, got {len(fields)}")
        query, rank_text, train_id, sim_text = fields
        try:
            rank = int(rank_text)
            sim = float(sim_text)
        except ValueError:
            raise ParseError(path, line_no, "rank or similarity is not numeric") from None
        if current is None or current.query != query:
            if rank != 1:
                raise ParseError(path, line_no, f"neighbor ranks of {query!r} must start at 1")
            current = NeighborList(query, [])
            results.append(current)
        elif rank != len(current.neighbors) + 1:
            raise ParseError(path, line_no, f"non-consecutive rank {rank} for {query!r}")
        current.neighbors.append((train_id, sim))
    return results


def _argmax_class(scores: dict[int, float]) -> tuple[int, float]:
    """Highest-scoring class; exact ties go to the lowest class label."""
    best_cls, best_score = None, None
    for cls in sorted(scores):
        score = scores[cls]
        if best_score is None or score > best_score:
            best_cls, best_score = cls, score
    return best_cls, best_score


def _accumulate(scores: dict[int, float], neighbors: list[tuple[str, float]],
                labels: dict[str, int], k_agg: int, query: str) -> None:
    if not 1 <= k_agg <= len(neighbors):
        raise ValueError(
            f"k_agg={k_agg} out of range for {query!r} with {len(neighbors)} neighbors"
        )
    for train_id, sim in neighbors[:k_agg]:
        if train_id not in labels:
            raise ValueError(f"no class label for train image {train_id!r}")
        cls = labels[train_id]
        scores[cls] = scores.get(cls, 0.0) + sim


def aggregate_topk(neighbor_lists: list[NeighborList], labels: dict[str, int],
                   k_agg: int = DEFAULT_K_AGGREGATE) -> Submission:
    """Predict per query by accumulating similarities of the top-k_agg
    neighbors per class; confidence is the winning score."""
    rows = []
    for nl in neighbor_lists:
        scores: dict[int, float] = {}
        _accumulate(scores, nl.neighbors, labels, k_agg, nl.query)
        cls, score = _argmax_class(scores)
        rows.append(Prediction(nl.query, cls, score))
    return Submission(rows)


def ensemble_aggregate(per_model_neighbors: list[list[NeighborList]],
                       labels: dict[str, int],
                       k_agg: int = DEFAULT_K_AGGREGATE) -> Submission:
    """Accumulate class scores across several models' neighbor lists."""
    if not per_model_neighbors:
        raise ValueError("need at least one model's neighbor lists")
    first = per_model_neighbors[0]
    order = [nl.query for nl in first]
    reference = set(order)
    indexed = []
    for m, lists in enumerate(per_model_neighbors):
        by_query = {nl.query: nl for nl in lists}
        if set(by_query) != reference:
            raise ValueError(f"model {m} covers a different test id set")
        indexed.append(by_query)
    rows = []
    for query in order:
        scores: dict[int, float] = {}
        for by_query in indexed:
            _accumulate(scores, by_query[query].neighbors, labels, k_agg, query)
        cls, score = _argmax_class(scores)
        rows.append(Prediction(query, cls, score))
    return Submission(rows)
