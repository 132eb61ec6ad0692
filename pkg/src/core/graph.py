"""
Undirected weighted graphs in compressed-row form, the symmetric normalized
Laplacian and the sparse-dense product used by every polynomial recurrence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import sparse

from src.core.errors import DimensionError, InputError, NodeIndexError
from src.utils.file_utils import iter_tsv_records, write_tsv

logger = logging.getLogger(__name__)

# Square CSR matrix with sorted column indices; may hold diagonal and negative entries.
SparseMatrix = sparse.csr_matrix

Edge = Union[Tuple[int, int], Tuple[int, int, float]]


@dataclass(frozen=True)
class Graph:
    """Symmetric adjacency without self-loops, stored as CSR with sorted columns."""

    adjacency: sparse.csr_matrix

    @property
    def num_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def row_offsets(self) -> np.ndarray:
        return self.adjacency.indptr

    @property
    def col_indices(self) -> np.ndarray:
        return self.adjacency.indices

    @property
    def values(self) -> np.ndarray:
        return self.adjacency.data

    @property
    def undirected(self) -> bool:
        return True

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.adjacency.nnz // 2)

    def neighbors(self, node: int) -> np.ndarray:
        start, stop = self.row_offsets[node], self.row_offsets[node + 1]
        return self.col_indices[start:stop]

    def edges(self) -> Iterator[Tuple[int, int, float]]:
        """Each undirected edge once, as (p, q, weight) with p < q."""
        coo = sparse.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        for idx in order:
            yield int(coo.row[idx]), int(coo.col[idx]), float(coo.data[idx])


def build_graph(edges: Iterable[Edge], num_nodes: int) -> Graph:
    """
    Build an undirected graph from an edge list.

    Each edge is inserted in both directions. Self-loops and zero weights are
    dropped. Repeated entries for the same node pair, including a pair given once
    per direction, collapse to the largest weight given.

    Args:
        edges: (p, q) or (p, q, weight) tuples with 0-based node ids
        num_nodes: node count N

    Returns:
        the graph

    Raises:
        InputError: num_nodes < 1, negative or non-finite weight, malformed edge
        NodeIndexError: a node id outside [0, num_nodes)
    """
    if int(num_nodes) < 1:
        raise InputError(f"num_nodes must be positive, got {num_nodes}")
    num_nodes = int(num_nodes)

    rows, cols, weights = [], [], []
    for position, edge in enumerate(edges):
        if len(edge) not in (2, 3):
            raise InputError(f"edge #{position} must be (p, q) or (p, q, weight), got {edge!r}")
        p, q = int(edge[0]), int(edge[1])
        weight = float(edge[2]) if len(edge) == 3 else 1.0
        if not (0 <= p < num_nodes and 0 <= q < num_nodes):
            raise NodeIndexError(f"edge #{position} ({p}, {q}) outside [0, {num_nodes})")
        if not np.isfinite(weight) or weight < 0.0:
            raise InputError(f"edge #{position} ({p}, {q}) has invalid weight {weight}")
        rows.append(p)
        cols.append(q)
        weights.append(weight)

    adjacency = _symmetric_adjacency(
        np.asarray(rows, dtype=np.int64),
        np.asarray(cols, dtype=np.int64),
        np.asarray(weights, dtype=np.float64),
        num_nodes,
    )
    return Graph(adjacency)


def _symmetric_adjacency(rows: np.ndarray, cols: np.ndarray, weights: np.ndarray, num_nodes: int) -> sparse.csr_matrix:
    keep = (rows != cols) & (weights > 0.0)
    low = np.minimum(rows[keep], cols[keep])
    high = np.maximum(rows[keep], cols[keep])
    weights = weights[keep]

    keys, inverse = np.unique(low * num_nodes + high, return_inverse=True)
    merged = np.zeros(keys.shape[0], dtype=np.float64)
    np.maximum.at(merged, inverse, weights)
    low, high = keys // num_nodes, keys % num_nodes

    adjacency = sparse.csr_matrix(
        (np.concatenate([merged, merged]), (np.concatenate([low, high]), np.concatenate([high, low]))),
        shape=(num_nodes, num_nodes),
    )
    adjacency.sort_indices()
    return adjacency


def degree_vector(g: Graph) -> np.ndarray:
    """Weighted degree d_p = sum_q A_pq."""
    return np.asarray(g.adjacency.sum(axis=1), dtype=np.float64).ravel()


def normalized_laplacian(g: Graph) -> SparseMatrix:
    """
    Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.

    Isolated nodes get D^{-1/2} = 0, so their row is the identity row.
    """
    degrees = degree_vector(g)
    inv_sqrt = np.zeros_like(degrees)
    connected = degrees > 0.0
    inv_sqrt[connected] = 1.0 / np.sqrt(degrees[connected])

    scaling = sparse.diags(inv_sqrt)
    lap = sparse.identity(g.num_nodes, format="csr") - scaling @ g.adjacency @ scaling
    lap = sparse.csr_matrix(lap)
    lap.sort_indices()
    return lap


def spmm(m: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """
    Sparse-dense product m @ x.

    Args:
        m: N x N sparse matrix
        x: N x d (or length-N) dense array

    Returns:
        dense product with the shape of x
    """
    dense = np.asarray(x, dtype=np.float64)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"sparse operand must be square, got {m.shape}")
    if dense.ndim not in (1, 2) or dense.shape[0] != m.shape[1]:
        raise DimensionError(f"cannot multiply {m.shape} by {dense.shape}")
    return np.asarray(m @ dense)


def permute_graph(g: Graph, perm: Sequence[int]) -> Graph:
    """Relabel node p as perm[p]."""
    mapping = np.asarray(perm, dtype=np.int64)
    if mapping.shape != (g.num_nodes,) or not np.array_equal(np.sort(mapping), np.arange(g.num_nodes)):
        raise InputError("perm must be a permutation of 0..N-1")
    coo = g.adjacency.tocoo()
    adjacency = sparse.csr_matrix(
        (coo.data, (mapping[coo.row], mapping[coo.col])),
        shape=g.adjacency.shape,
    )
    adjacency.sort_indices()
    return Graph(adjacency)


def read_edge_list(path: Union[str, Path], num_nodes: Optional[int] = None) -> Graph:
    """
    Read ``p<TAB>q[<TAB>weight]`` lines; ``#`` lines are comments.

    When ``num_nodes`` is omitted it is one more than the largest id seen.
    """
    edges = []
    for line_no, fields in iter_tsv_records(path):
        if len(fields) not in (2, 3):
            raise InputError(f"{path}:{line_no}: expected 2 or 3 fields, got {len(fields)}")
        try:
            p, q = int(fields[0]), int(fields[1])
            weight = float(fields[2]) if len(fields) == 3 else 1.0
        except ValueError as exc:
            raise InputError(f"{path}:{line_no}: {exc}") from exc
        if num_nodes is not None and not (0 <= p < num_nodes and 0 <= q < num_nodes):
            raise NodeIndexError(f"{path}:{line_no}: edge ({p}, {q}) outside [0, {num_nodes})")
        edges.append((p, q, weight))

    if num_nodes is None:
        num_nodes = 1 + max((max(p, q) for p, q, _ in edges), default=-1)
    logger.debug("read %d edge lines from %s", len(edges), path)
    return build_graph(edges, num_nodes)


def write_edge_list(g: Graph, path: Union[str, Path]) -> Path:
    rows = [(p, q, weight) for p, q, weight in g.edges()]
    return write_tsv(path, rows, header=("p", "q", "weight"), comments=(f"nodes: {g.num_nodes}",))
