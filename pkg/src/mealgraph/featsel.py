"""Feature-subset selection by clustering quality.

Every feature subset of the configured sizes is scored by clustering the
episodes in that subset's subspace (k-NN graph, spectral clustering at the
modularity-optimal K) and taking the mean silhouette of the result. The
matrix is z-scored column-wise once up front so Euclidean distances are not
dominated by bpm-scale features.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist

from .cycles import FeatureMatrix
from .graphcluster import ClusterConfig, build_knn_graph, default_knn_k, sweep_k


def silhouette(points: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-point silhouettes and their mean, under Euclidean distance.

    For point i, x(i) is the mean distance to its own cluster (excluding
    itself) and y(i) the smallest mean distance to another cluster; the
    silhouette is (y - x) / max(x, y), with 0 for singleton clusters and
    for the degenerate x = y = 0 case.
    """
    X = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette undefined for a single cluster")
    if any((labels == c).sum() == 0 for c in uniq):
        raise ValueError("every cluster must be non-empty")
    D = cdist(X, X)
    n = len(X)
    mean_to = np.empty((n, len(uniq)))
    sizes = np.empty(len(uniq))
    for ci, c in enumerate(uniq):
        members = labels == c
        sizes[ci] = members.sum()
        mean_to[:, ci] = D[:, members].mean(axis=1)
    s = np.zeros(n)
    for i in range(n):
        ci = int(np.flatnonzero(uniq == labels[i])[0])
        if sizes[ci] == 1:
            continue
        x = mean_to[i, ci] * sizes[ci] / (sizes[ci] - 1)  # exclude self
        y = min(mean_to[i, cj] for cj in range(len(uniq)) if cj != ci)
        denom = max(x, y)
        s[i] = 0.0 if denom == 0 else (y - x) / denom
    return s, float(s.mean())


@dataclass(frozen=True)
class SubsetScore:
    features: tuple[str, ...]
    k_used: int
    mean_silhouette: float


def enumerate_subsets(names: list[str], sizes: range) -> list[tuple[str, ...]]:
    """All feature subsets of the given sizes, in deterministic order."""
    out: list[tuple[str, ...]] = []
    for size in sizes:
        if 1 <= size <= len(names):
            out.extend(combinations(names, size))
    return out


def select_subset(
    fm: FeatureMatrix,
    sizes: range = range(2, 6),
    cfg: ClusterConfig = ClusterConfig(),
    seed: int = 0,
) -> list[SubsetScore]:
    """Rank feature subsets by mean silhouette of their clustering.

    For each candidate subset: build a k-NN graph in the z-scored subspace,
    sweep K for the modularity-optimal spectral clustering, and score the
    chosen partition's mean silhouette in that subspace. Returns subsets
    sorted by descending silhouette with lexicographic name tie-breaks.
    """
    if fm.n < 4:
        raise ValueError(f"subset selection needs at least 4 episodes, got {fm.n}")
    Z = fm.zscored()
    k = cfg.knn_k if cfg.knn_k > 0 else default_knn_k(fm.n)
    k_range = range(cfg.k_min, min(cfg.k_max, fm.n - 1) + 1)
    scores = []
    for subset in enumerate_subsets(fm.names, sizes):
        pts = Z.select(list(subset)).values
        graph = build_knn_graph(pts, k, weighted=cfg.weighted)
        sweep = sweep_k(graph, k_range, seed=seed, restarts=cfg.restarts, mode=cfg.mode)
        _, mean = silhouette(pts, sweep.best.labels)
        scores.append(SubsetScore(subset, sweep.best.K, mean))
    scores.sort(key=lambda s: (-s.mean_silhouette, s.features))
    return scores


def write_subset_scores(scores: list[SubsetScore]) -> bytes:
    """CSV export: rank,features,k,mean_silhouette with `;`-joined names."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["rank", "features", "k", "mean_silhouette"])
    for rank, s in enumerate(scores, start=1):
        writer.writerow([rank, ";".join(s.features), s.k_used, repr(s.mean_silhouette)])
    return out.getvalue().encode("utf-8")


def parse_subset_scores(data: bytes | str) -> list[SubsetScore]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["rank", "features", "k", "mean_silhouette"]:
        raise ValueError("expected subset score CSV header")
    return [
        SubsetScore(tuple(r[1].split(";")), int(r[2]), float(r[3]))
        for r in rows[1:]
        if r
    ]
