"""Training-set cleaning: class filtering, match graphs, component keeping.

For every class that survives the size filter, images become vertices of a
match graph whose edges connect pairs with cosine similarity strictly above
a threshold. Only the largest connected component is kept (classes with no
edges are discarded), and up to ``max_pairs`` matching pairs are sampled
per class for downstream use.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import DescriptorStore
from .seeds import mix_seed

DEFAULT_SIMILARITY_THRESHOLD = 0.5
DEFAULT_MIN_CLASS_SIZE = 4
DEFAULT_MAX_PAIRS = 100


@dataclass
class PairGraph:
    """Undirected match graph; edges store the smaller id first."""

    vertices: list[str]
    edges: list[tuple[str, str, float]]


@dataclass(frozen=True)
class CleaningStats:
    classes_removed_small: int
    classes_removed_no_pairs: int
    images_kept: int
    classes_kept: int
    pairs_sampled: int


@dataclass
class CleanDataset:
    kept: dict[int, list[str]]       # class -> ids of the kept component, sorted
    pairs: list[tuple[str, str]]
    stats: CleaningStats


def filter_small_classes(labels: dict[str, int],
                         min_size: int = DEFAULT_MIN_CLASS_SIZE) -> dict[str, int]:
    """Keep only classes with at least ``min_size`` images."""
    if min_size < 1:
        raise ValueError(f"min_size must be >= 1, got {min_size}")
    counts = Counter(labels.values())
    return {img: cls for img, cls in labels.items() if counts[cls] >= min_size}


def build_match_graph(images: list[str], store: DescriptorStore,
                      threshold: float) -> PairGraph:
    """Connect every pair of images whose cosine similarity exceeds the
    threshold (strictly). All pairs are examined."""
    ordered = sorted(images)
    rows = [store.row(image_id) for image_id in ordered]
    matrix = store.matrix[rows].astype(np.float64)
    sims = matrix @ matrix.T
    edges = []
    first, second = np.nonzero(np.triu(sims > threshold, k=1))
    for i, j in zip(first.tolist(), second.tolist()):
        edges.append((ordered[i], ordered[j], float(sims[i, j])))
    return PairGraph(ordered, edges)


class _UnionFind:
    def __init__(self, items):
        self.parent = {x: x for x in items}
        self.size = {x: 1 for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def max_connected_component(graph: PairGraph) -> set[str]:
    """Vertex set of the largest component among vertices with an edge.

    Returns the empty set for an edgeless graph. Size ties go to the
    component containing the lexicographically smallest id.
    """
    if not graph.edges:
        return set()
    touched = sorted({v for a, b, _ in graph.edges for v in (a, b)})
    uf = _UnionFind(touched)
    for a, b, _ in graph.edges:
        uf.union(a, b)
    members: dict[str, list[str]] = {}
    for v in touched:
        members.setdefault(uf.find(v), []).append(v)
    # touched is sorted, so members lists are sorted and min(id) is first.
    best = max(members.values(), key=lambda ids: len(ids))
    tied = [ids for ids in members.values() if len(ids) == len(best)]
    if len(tied) > 1:
        best = min(tied, key=lambda ids: ids[0])
    return set(best)


def sample_pairs(edges: list[tuple[str, str, float]], max_pairs: int,
                 seed: int) -> list[tuple[str, str]]:
    """Uniform sample without replacement of at most ``max_pairs`` edges.

    Edges are first sorted by (id1, id2) so the draw is reproducible across
    platforms, then partially Fisher-Yates shuffled with the given seed.
    """
    if max_pairs < 1:
        raise ValueError(f"max_pairs must be >= 1, got {max_pairs}")
    pool = sorted((a, b) for a, b, _ in edges)
    take = min(len(pool), max_pairs)
    rng = random.Random(seed)
    for i in range(take):
        j = rng.randrange(i, len(pool))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:take]


def clean_dataset(labels: dict[str, int], store: DescriptorStore,
                  threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
                  min_size: int = DEFAULT_MIN_CLASS_SIZE,
                  max_pairs: int = DEFAULT_MAX_PAIRS,
                  seed: int = 0) -> CleanDataset:
    """Run the full cleaning pipeline over every class."""
    surviving = filter_small_classes(labels, min_size)
    classes_before = len(set(labels.values()))
    by_class: dict[int, list[str]] = {}
    for image_id, cls in surviving.items():
        by_class.setdefault(cls, []).append(image_id)
    classes_removed_small = classes_before - len(by_class)

    kept: dict[int, list[str]] = {}
    pairs: list[tuple[str, str]] = []
    removed_no_pairs = 0
    images_kept = 0
    for cls in sorted(by_class):
        graph = build_match_graph(by_class[cls], store, threshold)
        component = max_connected_component(graph)
        if not component:
            removed_no_pairs += 1
            continue
        component_edges = [
            (a, b, s) for a, b, s in graph.edges if a in component and b in component
        ]
        kept[cls] = sorted(component)
        images_kept += len(component)
        pairs.extend(sample_pairs(component_edges, max_pairs, mix_seed(seed, "pairs", cls)))

    stats = CleaningStats(
        classes_removed_small=classes_removed_small,
        classes_removed_no_pairs=removed_no_pairs,
        images_kept=images_kept,
        classes_kept=len(kept),
        pairs_sampled=len(pairs),
    )
    return CleanDataset(kept, pairs, stats)


def save_clean_dataset(dataset: CleanDataset, labels_path: str, pairs_path: str,
                       stats_path: str) -> None:
    """Write kept labels, sampled pairs, and stats as three text files."""
    lines = ["id,landmark_id"]
    for cls in sorted(dataset.kept):
        lines.extend(f"{image_id},{cls}" for image_id in dataset.kept[cls])
    with open(labels_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    lines = ["id1,id2"]
    lines.extend(f"{a},{b}" for a, b in dataset.pairs)
    with open(pairs_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")

    s = dataset.stats
    with open(stats_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(
            "\n".join(
                [
                    f"classes_removed_small={s.classes_removed_small}",
                    f"classes_removed_no_pairs={s.classes_removed_no_pairs}",
                    f"images_kept={s.images_kept}",
                    f"classes_kept={s.classes_kept}",
                    f"pairs_sampled={s.pairs_sampled}",
                ]
            )
            + "\n"
        )
