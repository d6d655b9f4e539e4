"""Undirected graphs in CSR form, normalization, and feature propagation.

The graph type stores the adjacency structure directly (row offsets, column
indices, edge values) together with node features and integer labels.
scipy.sparse supplies the sparse-dense products; the stored arrays are the
source of truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, NumericError, ShapeError
from .rng import rng_for


@dataclass
class SparseGraph:
    """Symmetric unweighted graph with dense node features and labels.

    indptr/indices/values are standard CSR arrays of the adjacency matrix
    (values all 1.0, no self-loops).  features is (n, d) float64, labels is
    (n,) int64.
    """

    num_nodes: int
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.indptr = np.asarray(self.indptr, dtype=np.int64)
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    @property
    def num_edges(self) -> int:
        """Directed entry count; each undirected edge contributes two."""
        return int(self.indices.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    def adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(n, n))

    def validate(self) -> None:
        n = self.num_nodes
        if self.indptr.shape != (n + 1,) or self.indptr[0] != 0:
            raise ShapeError(f"bad indptr: shape {self.indptr.shape} for {n} nodes")
        if np.any(np.diff(self.indptr) < 0):
            raise ContractError("indptr must be non-decreasing")
        nnz = int(self.indptr[-1])
        if self.indices.shape != (nnz,) or self.values.shape != (nnz,):
            raise ShapeError(
                f"indices/values shapes {self.indices.shape}/{self.values.shape} != nnz {nnz}"
            )
        if nnz and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ContractError("column index out of range")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ShapeError(f"features shape {self.features.shape} does not match {n} nodes")
        if not np.isfinite(self.features).all():
            raise NumericError("non-finite feature value")
        if self.labels.shape != (n,):
            raise ShapeError(f"labels shape {self.labels.shape} does not match {n} nodes")
        a = self.adjacency()
        if (a != a.T).nnz != 0:
            raise ContractError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, num_nodes, edges, features, labels) -> "SparseGraph":
        """Build from an iterable of (i, j) pairs.

        Edges are symmetrized and deduplicated; self-loops in the input are
        dropped (normalization adds its own).
        """
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise ContractError(f"edge endpoint out of range for {num_nodes} nodes")
        e = e[e[:, 0] != e[:, 1]]
        both = np.vstack([e, e[:, ::-1]])
        both = np.unique(both, axis=0)
        a = sp.csr_matrix(
            (np.ones(both.shape[0]), (both[:, 0], both[:, 1])),
            shape=(num_nodes, num_nodes),
        )
        return cls(num_nodes, a.indptr, a.indices, a.data, features, labels)


def normalize_adjacency(g: SparseGraph) -> sp.csr_matrix:
    """Symmetrically normalized adjacency with self-loops.

    Returns D^{-1/2} (A + I) D^{-1/2} where D is the degree matrix of A + I.
    Self-loops guarantee every row has positive degree, so isolated nodes get
    the identity row.
    """
    a = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def propagate(s: sp.csr_matrix, x: np.ndarray, hops: int) -> np.ndarray:
    """Apply the propagation operator `hops` times: S^hops @ X.

    hops=0 returns a copy of X unchanged.  Linear in X.
    """
    if hops < 0:
        raise ContractError(f"hops must be >= 0, got {hops}")
    out = np.array(x, dtype=np.float64, copy=True)
    for _ in range(hops):
        out = s @ out
    return np.ascontiguousarray(out)


def induced_subgraph(g: SparseGraph, node_set) -> tuple[SparseGraph, dict[int, int]]:
    """Subgraph on `node_set`, keeping only edges with both endpoints inside.

    Nodes are relabeled in ascending original-id order.  Returns the subgraph
    and the old-to-new index map.
    """
    nodes = np.unique(np.asarray(sorted(node_set), dtype=np.int64))
    if nodes.size == 0:
        raise ContractError("induced_subgraph needs a non-empty node set")
    if nodes[0] < 0 or nodes[-1] >= g.num_nodes:
        raise ContractError(f"node id out of range for graph with {g.num_nodes} nodes")
    sub = g.adjacency()[nodes][:, nodes].tocsr()
    new = SparseGraph(
        num_nodes=int(nodes.size),
        indptr=sub.indptr,
        indices=sub.indices,
        values=sub.data,
        features=g.features[nodes].copy(),
        labels=g.labels[nodes].copy(),
    )
    mapping = {int(old): new_id for new_id, old in enumerate(nodes)}
    return new, mapping


def generate_sbm(
    num_classes: int,
    nodes_per_class: int,
    p_in: float,
    p_out: float,
    feature_dim: int,
    separation: float,
    seed: int,
    class_means: np.ndarray | None = None,
    feature_noise: float = 1.0,
) -> SparseGraph:
    """Stochastic block model with Gaussian features, one block per class.

    Edges are drawn independently with probability p_in inside a block and
    p_out across blocks.  Features are N(mean_c, noise^2 I); the default
    means are scaled one-hot vectors placed so every pair of class means is
    exactly `separation` apart (requires feature_dim >= num_classes).  Pass
    `class_means` (num_classes, feature_dim) to override, e.g. to give two
    classes identical feature distributions.

    Deterministic per seed: adjacency is drawn first, then features.  Dense
    n x n sampling, intended for desk-scale n.
    """
    if num_classes < 1 or nodes_per_class < 1:
        raise ContractError("need at least one class and one node per class")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ContractError(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in} p_out={p_out}")
    n = num_classes * nodes_per_class
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), nodes_per_class)
    rng = rng_for(seed, "sbm")

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    rows, cols = np.nonzero(upper)
    edges = np.stack([rows, cols], axis=1)

    if class_means is None:
        if feature_dim < num_classes:
            raise ContractError(
                f"default class means need feature_dim >= num_classes "
                f"({feature_dim} < {num_classes}); pass class_means explicitly"
            )
        means = np.zeros((num_classes, feature_dim))
        means[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
    else:
        means = np.asarray(class_means, dtype=np.float64)
        if means.shape != (num_classes, feature_dim):
            raise ShapeError(f"class_means shape {means.shape} != ({num_classes}, {feature_dim})")
    features = means[labels] + feature_noise * rng.normal(size=(n, feature_dim))
    return SparseGraph.from_edges(n, edges, features, labels)
