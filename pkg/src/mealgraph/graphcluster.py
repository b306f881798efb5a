"""Graph construction and clustering for episode self-labeling.

Episodes (rows of a standardized feature matrix) become vertices of a
k-nearest-neighbor affinity graph. The default clusterer embeds the graph
with the normalized-affinity construction (eigenvectors of the largest
eigenvalues of D^-1/2 A D^-1/2, rows scaled to unit length) and K-means
clusters the embedding rows; a literal unnormalized mode (smallest
eigenvectors of D - A) is selectable. The number of clusters is chosen by
sweeping K and keeping the partition with the largest modularity Q.

Girvan-Newman (iterated removal of the highest-betweenness edge) and plain
K-means with the elbow rule are provided as baselines. Everything is
deterministic given the same inputs and seed: eigen order, K-means seeding,
edge-removal ties, and argmax ties all have explicit tie-breaks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

MODE_NJW = "njw"
MODE_LITERAL = "literal"

KMEANS_TOL = 1e-8
KMEANS_MAX_ITER = 300


def default_knn_k(n: int) -> int:
    """Neighbor count used when none is configured."""
    return max(3, math.ceil(math.log2(n))) if n > 1 else 1


@dataclass(frozen=True)
class ClusterConfig:
    knn_k: int = 0  # 0 -> default_knn_k(n)
    weighted: bool = False
    mode: str = MODE_NJW
    k_min: int = 2
    k_max: int = 10
    restarts: int = 10


@dataclass(frozen=True)
class AffinityGraph:
    """Symmetric non-negative adjacency with zero diagonal.

    degrees are row sums of A; m is the total edge weight (sum A / 2).
    """

    A: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.A.sum(axis=1)

    @property
    def m(self) -> float:
        return float(self.degrees.sum() / 2.0)

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as (u, v) with u < v, lexicographically sorted."""
        iu, ju = np.nonzero(np.triu(self.A, k=1))
        return list(zip(iu.tolist(), ju.tolist()))

    @staticmethod
    def from_edges(
        n: int, edges: list[tuple[int, int]], weights: list[float] | None = None
    ) -> "AffinityGraph":
        A = np.zeros((n, n))
        ws = weights if weights is not None else [1.0] * len(edges)
        for (u, v), w in zip(edges, ws):
            if u == v:
                raise ValueError(f"self-loop on vertex {u}")
            A[u, v] = A[v, u] = w
        return AffinityGraph(A)


def build_knn_graph(
    points: np.ndarray, k: int, weighted: bool = False
) -> AffinityGraph:
    """Union-symmetrized k-NN graph under Euclidean distance.

    Each vertex connects to its k nearest neighbors (distance ties broken
    by index); an edge exists when either endpoint selected the other.
    Binary weights by default; `weighted` applies Gaussian weights
    exp(-d^2 / 2 sigma^2) with sigma the median pairwise distance.
    """
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"knn k must be in [1, n), got k={k} for n={n}")
    D = cdist(X, X)
    masked = D.copy()
    np.fill_diagonal(masked, -1.0)  # pin self to column 0 even among duplicates
    order = np.argsort(masked, axis=1, kind="stable")
    nbrs = order[:, 1 : k + 1]
    A = np.zeros((n, n))
    A[np.repeat(np.arange(n), k), nbrs.ravel()] = 1.0
    A = np.maximum(A, A.T)
    if weighted:
        sigma = float(np.median(pdist(X)))
        if sigma > 0:
            A = A * np.exp(-(D**2) / (2.0 * sigma**2))
    np.fill_diagonal(A, 0.0)
    return AffinityGraph(A)


# ---------------------------------------------------------------------------
# Spectral embedding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralEmbedding:
    """Eigenvector block X (orthonormal columns) and its row-normalized Y."""

    X: np.ndarray
    Y: np.ndarray
    eigenvalues: np.ndarray


def symmetric_eigendecomposition(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full eigendecomposition of a symmetric matrix.

    Returns (w, V) with eigenvalues ascending and orthonormal columns;
    per-pair residual ||Mv - wv|| stays below 1e-8 for well-scaled inputs.
    """
    w, V = np.linalg.eigh(np.asarray(M, dtype=float))
    return w, V


def _normalized_affinity(graph: AffinityGraph) -> np.ndarray:
    d = graph.degrees
    if np.any(d <= 0):
        bad = int(np.argmin(d))
        raise ValueError(
            f"vertex {bad} is isolated (degree 0); increase knn k or drop it"
        )
    inv_sqrt = 1.0 / np.sqrt(d)
    return graph.A * np.outer(inv_sqrt, inv_sqrt)


def _row_normalize(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    return X / safe


def decompose(graph: AffinityGraph, mode: str = MODE_NJW) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition ordered for embedding use.

    njw mode: eigenpairs of D^-1/2 A D^-1/2, largest eigenvalue first.
    literal mode: eigenpairs of L = D - A, smallest eigenvalue first.
    """
    if mode == MODE_NJW:
        w, V = symmetric_eigendecomposition(_normalized_affinity(graph))
        return w[::-1].copy(), V[:, ::-1].copy()
    if mode == MODE_LITERAL:
        L = np.diag(graph.degrees) - graph.A
        return symmetric_eigendecomposition(L)
    raise ValueError(f"unknown spectral mode {mode!r}")


def spectral_embed(graph: AffinityGraph, K: int, mode: str = MODE_NJW) -> SpectralEmbedding:
    """K-column spectral embedding of the graph."""
    if not 1 <= K <= graph.n:
        raise ValueError(f"K must be in [1, n], got {K} for n={graph.n}")
    w, V = decompose(graph, mode)
    X = V[:, :K]
    return SpectralEmbedding(X=X, Y=_row_normalize(X), eigenvalues=w[:K])


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------

def _kmeans_init(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-squared-weighted farthest-point seeding."""
    n = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    K = centers.shape[0]
    prev = math.inf
    labels = np.zeros(len(X), dtype=int)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(len(X)), labels]
        for c in range(K):
            if not np.any(labels == c):
                far = int(np.argmax(point_d2))
                labels[far] = c
                centers[c] = X[far]
                point_d2[far] = 0.0
        distortion = float(point_d2.sum())
        for c in range(K):
            centers[c] = X[labels == c].mean(axis=0)
        if prev - distortion <= KMEANS_TOL * max(prev, 1e-300) or distortion == 0.0:
            break
        prev = distortion
    return labels, distortion


def kmeans(
    points: np.ndarray, K: int, seed: int = 0, restarts: int = 10
) -> tuple[np.ndarray, float]:
    """Best-of-restarts Lloyd K-means; returns (labels, distortion).

    Deterministic under a fixed seed. Empty clusters re-seed at the point
    farthest from its centroid.
    """
    X = np.asarray(points, dtype=float)
    if not 1 <= K <= len(X):
        raise ValueError(f"K must be in [1, n], got {K} for n={len(X)}")
    rng = np.random.default_rng(seed)
    best_labels, best_d = None, math.inf
    for _ in range(max(1, restarts)):
        labels, d = _lloyd(X, _kmeans_init(X, K, rng))
        if d < best_d:
            best_labels, best_d = labels, d
    return best_labels, best_d


# ---------------------------------------------------------------------------
# Modularity
# ---------------------------------------------------------------------------

def modularity(graph: AffinityGraph, labels: np.ndarray) -> float:
    """Partition strength Q: intra-cluster weight versus the
    degree-preserving random expectation, in [-1, 1)."""
    labels = np.asarray(labels)
    if len(labels) != graph.n:
        raise ValueError("labels length must equal vertex count")
    two_m = graph.degrees.sum()
    if two_m <= 0:
        raise ValueError("modularity undefined for a graph with no edges")
    d = graph.degrees
    q = 0.0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        in_weight = graph.A[np.ix_(members, members)].sum()
        d_c = d[members].sum()
        q += in_weight - d_c * d_c / two_m
    return float(q / two_m)


@dataclass(frozen=True)
class Clustering:
    """A labeling of the n vertices into K clusters with its quality score."""

    labels: np.ndarray
    K: int
    Q: float
    method: str
    seed: int = 0

    def __post_init__(self):
        occupied = set(np.asarray(self.labels).tolist())
        if occupied != set(range(self.K)):
            raise ValueError(f"labels must occupy exactly 0..{self.K - 1}")


def _compact_labels(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Relabel to 0..K-1 in order of first appearance."""
    out = np.empty(len(labels), dtype=int)
    mapping: dict[int, int] = {}
    for i, lab in enumerate(np.asarray(labels).tolist()):
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out, len(mapping)


def spectral_cluster(
    graph: AffinityGraph,
    K: int,
    seed: int = 0,
    restarts: int = 10,
    mode: str = MODE_NJW,
) -> Clustering:
    """Embed the graph at K dimensions and K-means the embedding rows."""
    emb = spectral_embed(graph, K, mode)
    raw, _ = kmeans(emb.Y, K, seed=seed, restarts=restarts)
    labels, k = _compact_labels(raw)
    return Clustering(labels, k, modularity(graph, labels), "spectral", seed)


# ---------------------------------------------------------------------------
# K sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    """(K, Q) rows from the modularity sweep; k_opt attains q_opt, ties to
    smaller K. Ks whose clustering failed are simply absent from rows."""

    rows: list[tuple[int, float]]
    k_opt: int
    q_opt: float
    best: Clustering | None = None


def sweep_k(
    graph: AffinityGraph,
    k_range: range | None = None,
    seed: int = 0,
    restarts: int = 10,
    mode: str = MODE_NJW,
) -> SweepResult:
    """Cluster at each K in k_range and score with modularity.

    The eigendecomposition is computed once and sliced per K. Default range
    is 2..min(10, n-1).
    """
    n = graph.n
    if k_range is None:
        k_range = range(2, min(10, n - 1) + 1)
    w, V = decompose(graph, mode)
    rows: list[tuple[int, float]] = []
    best: tuple[int, float, Clustering] | None = None
    for K in k_range:
        if not 1 <= K <= n:
            continue
        try:
            Y = _row_normalize(V[:, :K])
            raw, _ = kmeans(Y, K, seed=seed, restarts=restarts)
            labels, k_eff = _compact_labels(raw)
            q = modularity(graph, labels)
        except ValueError:
            continue
        rows.append((K, q))
        clustering = Clustering(labels, k_eff, q, "spectral", seed)
        if best is None or q > best[1]:
            best = (K, q, clustering)
    if best is None:
        raise ValueError("no K in the sweep range produced a clustering")
    return SweepResult(rows=rows, k_opt=best[0], q_opt=best[1], best=best[2])


# ---------------------------------------------------------------------------
# Girvan-Newman baseline
# ---------------------------------------------------------------------------

def edge_betweenness(
    adj: list[list[int]], n: int
) -> dict[tuple[int, int], float]:
    """Exact edge betweenness via breadth-first accumulation from every
    source (unweighted shortest paths); undirected edges keyed (u, v), u<v."""
    bt: dict[tuple[int, int], float] = {}
    for s in range(n):
        dist = [-1] * n
        sigma = [0.0] * n
        preds: list[list[int]] = [[] for _ in range(n)]
        dist[s] = 0
        sigma[s] = 1.0
        order = [s]
        head = 0
        while head < len(order):
            v = order[head]
            head += 1
            for u in adj[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    order.append(u)
                if dist[u] == dist[v] + 1:
                    sigma[u] += sigma[v]
                    preds[u].append(v)
        delta = [0.0] * n
        for v in reversed(order):
            for u in preds[v]:
                share = sigma[u] / sigma[v] * (1.0 + delta[v])
                key = (u, v) if u < v else (v, u)
                bt[key] = bt.get(key, 0.0) + share
                delta[u] += share
    return {e: b / 2.0 for e, b in bt.items()}


def _components(adj: list[list[int]], n: int) -> np.ndarray:
    """Component labels, numbered by smallest contained vertex."""
    labels = np.full(n, -1, dtype=int)
    comp = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        stack = [s]
        labels[s] = comp
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if labels[u] < 0:
                    labels[u] = comp
                    stack.append(u)
        comp += 1
    return labels


def girvan_newman(
    graph: AffinityGraph,
    k_target: int | None = None,
    q_max: bool = False,
    seed: int = 0,
) -> Clustering:
    """Split the graph by repeatedly removing the highest-betweenness edge.

    Betweenness is recomputed after every removal (ties go to the
    lexicographically smallest endpoint pair) on the graph topology,
    ignoring weights. With `k_target`, stops as soon as the component count
    reaches it; with `q_max`, runs the full removal sequence and returns the
    intermediate partition with the largest Q (scored on the original
    graph). Exactly one of the two modes must be chosen.
    """
    if (k_target is None) == (not q_max):
        raise ValueError("choose exactly one of k_target or q_max mode")
    n = graph.n
    if k_target is not None and not 1 <= k_target <= n:
        raise ValueError(f"k_target must be in [1, n], got {k_target}")
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in graph.edges():
        adj[u].append(v)
        adj[v].append(u)
    best_labels, best_q = None, -math.inf
    while True:
        labels = _components(adj, n)
        n_comp = int(labels.max()) + 1
        if q_max:
            q = modularity(graph, labels)
            if q > best_q:
                best_labels, best_q = labels, q
        elif n_comp >= k_target:
            return Clustering(labels, n_comp, modularity(graph, labels), "gn", seed)
        edges_left = [(u, v) for u in range(n) for v in adj[u] if u < v]
        if not edges_left:
            break
        bt = edge_betweenness(adj, n)
        best_edge = max(sorted(bt), key=lambda e: bt[e])
        u, v = best_edge
        adj[u].remove(v)
        adj[v].remove(u)
    if q_max:
        k = int(best_labels.max()) + 1
        return Clustering(best_labels, k, best_q, "gn", seed)
    raise ValueError(f"cannot reach {k_target} components: graph exhausted")


# ---------------------------------------------------------------------------
# K-means + elbow baseline
# ---------------------------------------------------------------------------

def elbow_k(distortions: list[float]) -> int:
    """Elbow of a distortion curve for K = 1..K_max.

    Picks the interior K maximizing the second difference
    d(K-1) - 2 d(K) + d(K+1); ties go to the smaller K.
    """
    if len(distortions) < 3:
        raise ValueError("elbow needs distortions for at least 3 values of K")
    best_k, best_v = None, -math.inf
    for k in range(2, len(distortions)):
        v = distortions[k - 2] - 2.0 * distortions[k - 1] + distortions[k]
        if v > best_v:
            best_k, best_v = k, v
    return best_k


def kmeans_elbow(
    points: np.ndarray,
    k_max: int = 10,
    seed: int = 0,
    restarts: int = 10,
    graph: AffinityGraph | None = None,
) -> tuple[Clustering, list[float]]:
    """K-means baseline: elbow-selected K on raw coordinates.

    Returns the clustering and the distortion curve for K = 1..k_max. Q is
    scored on `graph` when given (for comparison against the graph
    methods), else NaN.
    """
    X = np.asarray(points, dtype=float)
    k_max = min(k_max, len(X))
    curve: list[float] = []
    labelings: list[np.ndarray] = []
    for K in range(1, k_max + 1):
        labels, d = kmeans(X, K, seed=seed, restarts=restarts)
        curve.append(d)
        labelings.append(labels)
    k = elbow_k(curve)
    labels, k_eff = _compact_labels(labelings[k - 1])
    q = modularity(graph, labels) if graph is not None else math.nan
    return Clustering(labels, k_eff, q, "kmeans", seed), curve


# ---------------------------------------------------------------------------
# Heaviness levels
# ---------------------------------------------------------------------------

def assign_heaviness_levels(labels: np.ndarray, fm) -> dict[int, int]:
    """Order clusters by physiological response strength.

    Clusters sort ascending by centroid cycle_mean (ties by centroid
    peak_bpm, then cluster id); level 1 is the lightest.
    """
    labels = np.asarray(labels)
    c_mean = np.asarray(fm.column("cycle_mean"), dtype=float)
    p = np.asarray(fm.column("peak_bpm"), dtype=float)
    keys = []
    for c in np.unique(labels):
        members = labels == c
        keys.append((float(np.nanmean(c_mean[members])),
                     float(np.nanmean(p[members])), int(c)))
    keys.sort()
    return {c: level for level, (_, _, c) in enumerate(keys, start=1)}
