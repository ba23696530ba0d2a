"""Construction of the merged class graph.

The merged graph C unions an expert taxonomy (A, undirected edges plus all
self-loops) with a k-nearest-neighbor graph over class word embeddings (B,
Euclidean distance, neighbors farther than `alpha` pruned). C is normalized
into the propagation matrix used by the network, either random-walk
(D^-1 C, the default) or symmetric (D^-1/2 C D^-1/2).
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError, InvariantError, ShapeError, UnresolvableClassError
from .tensor import SparseAdjacency, as_matrix

NORM_MODES = ("random_walk", "sym")

_TOKEN_SPLIT = re.compile(r"[\s_\-]+")


@dataclass(frozen=True)
class ClassIndex:
    """Ordered class ids: indices [0, n_seen) are seen, the rest unseen."""

    names: tuple
    n_seen: int
    n_unseen: int
    display_names: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        display = tuple(self.display_names) or self.names
        object.__setattr__(self, "display_names", display)
        if len(set(self.names)) != len(self.names):
            dupes = sorted({n for n in self.names if self.names.count(n) > 1})
            raise InputError(f"duplicate class ids: {', '.join(dupes)}")
        if self.n_seen + self.n_unseen != len(self.names):
            raise InputError(
                f"seen+unseen counts ({self.n_seen}+{self.n_unseen}) "
                f"do not match {len(self.names)} classes"
            )
        if len(display) != len(self.names):
            raise InputError("display_names length does not match names")

    @property
    def n_total(self) -> int:
        return len(self.names)

    def position(self, name: str) -> int:
        try:
            return self._lookup[name]
        except AttributeError:
            object.__setattr__(self, "_lookup", {n: i for i, n in enumerate(self.names)})
            return self._lookup[name]

    def seen_indices(self) -> range:
        return range(self.n_seen)

    def unseen_indices(self) -> range:
        return range(self.n_seen, self.n_total)


@dataclass(frozen=True)
class EmbeddingTable:
    """One embedding row per class, aligned with a ClassIndex."""

    index: ClassIndex
    vectors: np.ndarray

    def __post_init__(self):
        vec = as_matrix(self.vectors, "embedding table")
        if vec.shape[0] != self.index.n_total:
            raise ShapeError(
                f"embedding table has {vec.shape[0]} rows for {self.index.n_total} classes"
            )
        if not np.all(np.isfinite(vec)):
            raise InputError("embedding table contains non-finite entries")
        object.__setattr__(self, "vectors", vec)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def tokenize_name(name: str) -> list:
    """Lowercase and split on whitespace, underscores and hyphens."""
    return [t for t in _TOKEN_SPLIT.split(name.lower()) if t]


def embed_class_name(name: str, word_vectors) -> np.ndarray:
    """Mean of the word vectors of the name's tokens; unknown tokens skipped."""
    tokens = tokenize_name(name)
    if not tokens:
        raise UnresolvableClassError([name])
    found = [np.asarray(word_vectors[t], dtype=np.float64) for t in tokens if t in word_vectors]
    if not found:
        raise UnresolvableClassError([name])
    return np.mean(found, axis=0)


def build_embedding_table(index: ClassIndex, word_vectors) -> tuple:
    """Embed every class display name.

    Returns (EmbeddingTable, missing_token_counts). Classes with no resolvable
    token at all are collected and reported together in one error.
    """
    rows, missing, unresolved = [], {}, []
    for cid, display in zip(index.names, index.display_names):
        tokens = tokenize_name(display)
        n_missing = sum(1 for t in tokens if t not in word_vectors)
        if n_missing:
            missing[cid] = n_missing
        try:
            rows.append(embed_class_name(display, word_vectors))
        except UnresolvableClassError:
            unresolved.append(cid)
            rows.append(None)
    if unresolved:
        raise UnresolvableClassError(unresolved)
    return EmbeddingTable(index=index, vectors=np.stack(rows)), missing


def load_taxonomy(edges, index: ClassIndex) -> SparseAdjacency:
    """Undirected taxonomy adjacency with all self-loops, binary values."""
    n = index.n_total
    rows = list(range(n))
    cols = list(range(n))
    for parent, child in edges:
        try:
            i = index.position(parent)
        except KeyError:
            raise InputError(f"taxonomy edge ({parent!r}, {child!r}): unknown id {parent!r}")
        try:
            j = index.position(child)
        except KeyError:
            raise InputError(f"taxonomy edge ({parent!r}, {child!r}): unknown id {child!r}")
        if i == j:
            raise InputError(f"taxonomy edge ({parent!r}, {child!r}) is a self-edge")
        rows += [i, j]
        cols += [j, i]
    a = SparseAdjacency.from_coo(n, rows, cols, np.ones(len(rows)))
    return a.with_values(np.ones(a.nnz))


def knn_graph(points: np.ndarray, k: int, alpha: float) -> SparseAdjacency:
    """k-nearest-neighbor graph under Euclidean distance, pruned at alpha.

    Each node's k nearest other nodes (ties broken by ascending index) are
    candidates; candidates at distance > alpha are dropped; surviving pairs
    become undirected edges. The diagonal stays empty.
    """
    points = as_matrix(points, "embedding points")
    n = points.shape[0]
    if n < 2:
        raise ConfigError(f"knn_graph needs at least 2 points, got {n}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ConfigError(f"k={k} must be smaller than the number of points n={n}")
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    rows, cols = [], []
    for i in range(n):
        diff = points - points[i]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dist[i] = np.inf
        # stable sort keeps ascending index among equal distances
        nearest = np.argsort(dist, kind="stable")[:k]
        for j in nearest:
            if dist[j] <= alpha:
                rows += [i, int(j)]
                cols += [int(j), i]
    if not rows:
        return SparseAdjacency.empty(n)
    b = SparseAdjacency.from_coo(n, rows, cols, np.ones(len(rows)))
    return b.with_values(np.ones(b.nnz))


def merge_graphs(a: SparseAdjacency, b: SparseAdjacency, binarize: bool = True) -> SparseAdjacency:
    """Union of two adjacencies. Values are clipped to 1.0 unless binarize is
    off, in which case overlapping entries keep their literal sum."""
    if a.n != b.n:
        raise ShapeError(f"cannot merge graphs of sizes {a.n} and {b.n}")
    ra, ca, va = a.coo()
    rb, cb, vb = b.coo()
    c = SparseAdjacency.from_coo(
        a.n,
        np.concatenate([ra, rb]),
        np.concatenate([ca, cb]),
        np.concatenate([va, vb]),
    )
    if binarize:
        c = c.with_values(np.ones(c.nnz))
    return c


def normalize_adjacency(c: SparseAdjacency, mode: str) -> SparseAdjacency:
    """Degree-normalize: random_walk divides each row by its sum, sym divides
    entry (i, j) by sqrt(deg_i * deg_j)."""
    if mode not in NORM_MODES:
        raise ConfigError(f"unknown normalization mode {mode!r}, expected one of {NORM_MODES}")
    deg = c.row_sums()
    if np.any(deg == 0):
        empty = np.nonzero(deg == 0)[0][:5].tolist()
        raise InvariantError(f"zero-degree rows {empty} at normalization time")
    rows, cols, vals = c.coo()
    if mode == "random_walk":
        scaled = vals / deg[rows]
    else:
        scaled = vals / np.sqrt(deg[rows] * deg[cols])
    return c.with_values(scaled)


@dataclass(frozen=True)
class GraphBundle:
    """The raw (taxonomy, knn, merged) adjacencies plus the normalized one."""

    taxonomy: SparseAdjacency
    knn: SparseAdjacency
    merged: SparseAdjacency
    normalized: SparseAdjacency
    norm_mode: str

    @property
    def n(self) -> int:
        return self.taxonomy.n


def build_bundle(
    embeddings: EmbeddingTable,
    taxonomy_edges,
    k: int = 2,
    alpha: float = 0.5,
    norm_mode: str = "random_walk",
    with_knn: bool = True,
) -> GraphBundle:
    """Assemble A, B, C and the normalized adjacency in one go.

    with_knn=False keeps B empty (taxonomy-only ablation).
    """
    a = load_taxonomy(taxonomy_edges, embeddings.index)
    if with_knn:
        b = knn_graph(embeddings.vectors, k=k, alpha=alpha)
    else:
        b = SparseAdjacency.empty(embeddings.index.n_total)
    c = merge_graphs(a, b)
    return GraphBundle(
        taxonomy=a, knn=b, merged=c,
        normalized=normalize_adjacency(c, norm_mode),
        norm_mode=norm_mode,
    )


def insert_category(
    bundle: GraphBundle,
    embeddings: EmbeddingTable,
    new_name: str,
    new_vec: np.ndarray,
    k: int = 2,
    alpha: float = 0.5,
    display_name: str | None = None,
) -> tuple:
    """Absorb one new (unseen) class without touching existing node indices.

    The new node gets a self-loop in the taxonomy part and undirected knn
    edges to its k nearest existing embeddings within alpha. Returns a fresh
    (GraphBundle, EmbeddingTable) pair; inputs are left untouched.
    """
    index = embeddings.index
    if new_name in index.names:
        raise InputError(f"class {new_name!r} already present")
    new_vec = np.asarray(new_vec, dtype=np.float64).reshape(-1)
    if new_vec.shape[0] != embeddings.dim:
        raise ShapeError(
            f"new embedding has dim {new_vec.shape[0]}, table has {embeddings.dim}"
        )
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    n = index.n_total
    new_index = ClassIndex(
        names=index.names + (new_name,),
        n_seen=index.n_seen,
        n_unseen=index.n_unseen + 1,
        display_names=index.display_names + (display_name or new_name,),
    )
    new_table = EmbeddingTable(index=new_index, vectors=np.vstack([embeddings.vectors, new_vec]))

    ra, ca, va = bundle.taxonomy.coo()
    a = SparseAdjacency.from_coo(
        n + 1, np.append(ra, n), np.append(ca, n), np.append(va, 1.0)
    )

    diff = embeddings.vectors - new_vec
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    nearest = np.argsort(dist, kind="stable")[:k]
    neighbors = [int(j) for j in nearest if dist[j] <= alpha]
    if not neighbors:
        warnings.warn(
            f"class {new_name!r}: no existing embedding within alpha={alpha}; "
            "node joins with a self-loop only",
            stacklevel=2,
        )
    rb, cb, vb = bundle.knn.coo()
    rows = np.concatenate([rb, [n] * len(neighbors), neighbors]).astype(np.int64)
    cols = np.concatenate([cb, neighbors, [n] * len(neighbors)]).astype(np.int64)
    b = SparseAdjacency.from_coo(n + 1, rows, cols, np.ones(rows.size))
    b = b.with_values(np.ones(b.nnz))

    c = merge_graphs(a, b)
    new_bundle = GraphBundle(
        taxonomy=a, knn=b, merged=c,
        normalized=normalize_adjacency(c, bundle.norm_mode),
        norm_mode=bundle.norm_mode,
    )
    return new_bundle, new_table
