"""Undirected unweighted graphs, edge flips and attack candidate sets."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from .exceptions import CapacityError, ParseError, StateError, ValidationError

logger = logging.getLogger(__name__)


class DroppedLinesWarning(UserWarning):
    """Raised by the loaders when duplicate edges or self-loops are discarded."""


class Graph:
    """Immutable undirected, unweighted graph without singleton nodes.

    Parameters
    ----------
    adjacency : array-like or sparse matrix, shape [n, n]
        Symmetric 0/1 adjacency matrix with zero diagonal.
    """

    def __init__(self, adjacency):
        adj = sp.csr_matrix(adjacency, dtype=np.float64)
        adj.sum_duplicates()
        adj.eliminate_zeros()
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {adj.shape}")
        if adj.nnz and not np.all(adj.data == 1.0):
            raise ValidationError("adjacency must be unweighted (0/1 entries)")
        if adj.diagonal().any():
            raise ValidationError("adjacency must have a zero diagonal (no self-loops)")
        if (adj != adj.T).nnz:
            raise ValidationError("adjacency must be symmetric")
        degrees = np.asarray(adj.sum(axis=1)).ravel()
        if adj.shape[0] == 0:
            raise ValidationError("graph has no nodes")
        singletons = np.flatnonzero(degrees == 0)
        if len(singletons):
            raise ValidationError(
                f"graph has {len(singletons)} singleton node(s), e.g. node {singletons[0]}"
            )
        adj.sort_indices()
        for arr in (adj.data, adj.indices, adj.indptr):
            arr.setflags(write=False)
        self._adj = adj
        self._degrees = degrees.astype(np.int64)
        self._degrees.setflags(write=False)
        upper = sp.triu(adj, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        edges = np.column_stack([upper.row[order], upper.col[order]]).astype(np.int64)
        edges.setflags(write=False)
        self._edges = edges
        self._edge_keys = None

    @classmethod
    def from_edges(cls, edges, n=None) -> "Graph":
        """Build a graph from an (m, 2) array of undirected edges.

        Duplicates (in either orientation) are merged; self-loops are rejected.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if n is None:
            n = int(edges.max()) + 1 if len(edges) else 0
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise ValidationError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValidationError("self-loops are not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        keys = np.unique(lo * n + hi)
        lo, hi = keys // n, keys % n
        data = np.ones(2 * len(keys))
        adj = sp.csr_matrix(
            (data, (np.concatenate([lo, hi]), np.concatenate([hi, lo]))), shape=(n, n)
        )
        return cls(adj)

    @property
    def n(self) -> int:
        return self._adj.shape[0]

    @property
    def adjacency(self) -> sp.csr_matrix:
        return self._adj

    @property
    def degrees(self) -> np.ndarray:
        return self._degrees

    @property
    def edges(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with i < j, sorted lexicographically."""
        return self._edges

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def volume(self) -> int:
        """Sum of all adjacency entries, i.e. twice the undirected edge count."""
        return 2 * self.num_edges

    @property
    def min_degree(self) -> int:
        return int(self._degrees.min())

    def has_edge(self, i, j) -> bool:
        return self._adj[i, j] != 0

    def edge_indicator(self, pairs) -> np.ndarray:
        """Vectorised A[i, j] for an (m, 2) array of pairs."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if self._edge_keys is None:
            self._edge_keys = self._edges[:, 0] * self.n + self._edges[:, 1]
        lo = np.minimum(pairs[:, 0], pairs[:, 1])
        hi = np.maximum(pairs[:, 0], pairs[:, 1])
        keys = lo * self.n + hi
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, max(len(self._edge_keys) - 1, 0))
        if len(self._edge_keys) == 0:
            return np.zeros(len(pairs), dtype=np.int64)
        return (self._edge_keys[pos] == keys).astype(np.int64)

    def toarray(self) -> np.ndarray:
        return self._adj.toarray()

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n).tobytes())
        h.update(np.ascontiguousarray(self._edges).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self._edges, other._edges)

    def __hash__(self):
        return hash(self.fingerprint())

    def __repr__(self):
        return f"Graph(n={self.n}, edges={self.num_edges}, vol={self.volume})"


@dataclass(frozen=True)
class EdgeFlip:
    """Toggle of the pair (i, j): ``delta_w = +1`` adds the edge, ``-1`` removes it."""

    i: int
    j: int
    delta_w: int

    def __post_init__(self):
        if self.i == self.j:
            raise ValidationError(f"flip endpoints must differ, got ({self.i}, {self.j})")
        if self.delta_w not in (1, -1):
            raise ValidationError(f"delta_w must be +1 or -1, got {self.delta_w}")

    @classmethod
    def for_graph(cls, g: Graph, i, j) -> "EdgeFlip":
        return cls(int(i), int(j), 1 - 2 * int(g.has_edge(i, j)))

    @property
    def key(self):
        return (min(self.i, self.j), max(self.i, self.j))

    def inverse(self) -> "EdgeFlip":
        return EdgeFlip(self.i, self.j, -self.delta_w)


@dataclass
class CandidateSet:
    """Pool of flips an attacker may choose from.

    ``pairs`` holds (i, j) with i < j, ``delta_w`` the matching flip signs.
    """

    pairs: np.ndarray
    delta_w: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.delta_w = np.asarray(self.delta_w, dtype=np.int64).reshape(-1)
        if len(self.pairs) != len(self.delta_w):
            raise ValidationError("pairs and delta_w lengths differ")

    @classmethod
    def from_pairs(cls, g: Graph, pairs, provenance=None) -> "CandidateSet":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        pairs = np.column_stack([pairs.min(axis=1), pairs.max(axis=1)])
        if np.any(pairs[:, 0] == pairs[:, 1]):
            raise ValidationError("candidate pairs must not be self-loops")
        keys = pairs[:, 0] * g.n + pairs[:, 1]
        if len(np.unique(keys)) != len(keys):
            raise ValidationError("candidate set contains duplicate pairs")
        delta_w = 1 - 2 * g.edge_indicator(pairs)
        return cls(pairs, delta_w, dict(provenance or {}))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[EdgeFlip]:
        for (i, j), dw in zip(self.pairs.tolist(), self.delta_w.tolist()):
            yield EdgeFlip(i, j, dw)

    @property
    def flips(self) -> list[EdgeFlip]:
        return list(self)

    def subset(self, index) -> "CandidateSet":
        return CandidateSet(self.pairs[index], self.delta_w[index], dict(self.provenance))

    def to_bytes(self) -> bytes:
        payload = {
            "provenance": self.provenance,
            "pairs": self.pairs.tolist(),
            "delta_w": self.delta_w.tolist(),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def _read_pairs(path, what):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected two integers per {what}, got {raw.strip()!r}", lineno)
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer token in {raw.strip()!r}", lineno) from None
            if a < 0 or (what == "edge" and b < 0):
                raise ParseError("node ids must be non-negative", lineno)
            rows.append((a, b))
    return rows


def load_edge_list(path) -> Graph:
    """Read a whitespace separated, 0-indexed edge list.

    Lines starting with ``#`` are comments. Self-loops and duplicate edges are
    dropped and reported through a single :class:`DroppedLinesWarning`.
    """
    rows = _read_pairs(Path(path), "edge")
    if not rows:
        raise ValidationError(f"{path}: no edges found")
    edges = np.array(rows, dtype=np.int64)
    loops = edges[:, 0] == edges[:, 1]
    edges = edges[~loops]
    n = int(np.array(rows).max()) + 1
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    n_unique = len(np.unique(lo * n + hi))
    dropped = int(loops.sum()) + (len(edges) - n_unique)
    if dropped:
        msg = f"{path}: dropped {dropped} line(s) ({int(loops.sum())} self-loop(s), {len(edges) - n_unique} duplicate(s))"
        logger.warning(msg)
        warnings.warn(msg, DroppedLinesWarning, stacklevel=2)
    return Graph.from_edges(edges, n=n)


def load_labels(path, n=None) -> np.ndarray:
    """Read ``node_id label_id`` lines into a dense integer label vector."""
    rows = _read_pairs(Path(path), "label")
    if not rows:
        raise ValidationError(f"{path}: no labels found")
    arr = np.array(rows, dtype=np.int64)
    size = n if n is not None else int(arr[:, 0].max()) + 1
    if arr[:, 0].max() >= size:
        raise ValidationError(f"label for node {arr[:, 0].max()} exceeds node count {size}")
    labels = np.full(size, -1, dtype=np.int64)
    labels[arr[:, 0]] = arr[:, 1]
    if np.any(labels < 0):
        missing = np.flatnonzero(labels < 0)
        raise ValidationError(f"{len(missing)} node(s) without a label, e.g. node {missing[0]}")
    return labels


def save_edge_list(g: Graph, path):
    np.savetxt(path, g.edges, fmt="%d")


def apply_flips(g: Graph, flips: Iterable[EdgeFlip]) -> Graph:
    """Return a new graph with every flip applied in order.

    Each flip must agree with the adjacency at the moment it is applied.
    """
    if isinstance(flips, CandidateSet):
        flips = flips.flips
    current = {(int(i), int(j)) for i, j in g.edges}
    n_applied = 0
    for flip in flips:
        key = flip.key
        if key[1] >= g.n or key[0] < 0:
            raise ValidationError(f"flip {key} out of range for n={g.n}")
        present = key in current
        if flip.delta_w != 1 - 2 * int(present):
            action = "add" if flip.delta_w > 0 else "remove"
            raise StateError(f"cannot {action} {key}: edge is {'present' if present else 'absent'}")
        if present:
            current.remove(key)
        else:
            current.add(key)
        n_applied += 1
    if n_applied == 0:
        return g
    edges = np.array(sorted(current), dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(edges, n=g.n)


def _as_node_set(restricted) -> np.ndarray:
    if restricted is None:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.asarray(list(restricted), dtype=np.int64))


def sample_add_candidates(g: Graph, count, seed=0, restricted=None) -> CandidateSet:
    """Sample ``count`` distinct non-edges uniformly without replacement.

    Pairs touching a node in ``restricted`` are never returned.
    """
    count = int(count)
    if count < 0:
        raise ValidationError("count must be non-negative")
    blocked = np.zeros(g.n, dtype=bool)
    blocked[_as_node_set(restricted)] = True
    allowed = np.flatnonzero(~blocked)
    na = len(allowed)
    edges_inside = int(np.sum(~blocked[g.edges[:, 0]] & ~blocked[g.edges[:, 1]]))
    capacity = na * (na - 1) // 2 - edges_inside
    if count > capacity:
        raise CapacityError(f"requested {count} addition candidates, only {capacity} eligible non-edges")
    provenance = {"kind": "add", "seed": int(seed), "restricted": _as_node_set(restricted).tolist()}
    rng = np.random.default_rng(seed)
    if count == 0:
        return CandidateSet(np.zeros((0, 2), np.int64), np.zeros(0, np.int64), provenance)

    if count * 2 > capacity:
        # dense regime: enumerate all eligible pairs
        iu, ju = np.triu_indices(na, k=1)
        pairs = np.column_stack([allowed[iu], allowed[ju]])
        pairs = pairs[g.edge_indicator(pairs) == 0]
        pick = np.sort(rng.choice(len(pairs), size=count, replace=False))
        pairs = pairs[pick]
    else:
        chosen = {}
        while len(chosen) < count:
            batch = max(2 * (count - len(chosen)), 64)
            a = allowed[rng.integers(0, na, size=batch)]
            b = allowed[rng.integers(0, na, size=batch)]
            keep = a != b
            cand = np.column_stack([np.minimum(a, b), np.maximum(a, b)])[keep]
            cand = cand[g.edge_indicator(cand) == 0]
            for i, j in cand.tolist():
                if (i, j) not in chosen:
                    chosen[(i, j)] = None
                    if len(chosen) == count:
                        break
        pairs = np.array(list(chosen), dtype=np.int64)
    return CandidateSet(pairs, np.ones(len(pairs), dtype=np.int64), provenance)


def protected_edges(g: Graph, seed=0) -> np.ndarray:
    """One uniformly chosen incident edge per node, visited in ascending id order.

    Degree-1 nodes necessarily protect their only edge. Returns a sorted array of
    unique (i, j) pairs with i < j.
    """
    rng = np.random.default_rng(seed)
    adj = g.adjacency
    out = set()
    for v in range(g.n):
        nbrs = adj.indices[adj.indptr[v]:adj.indptr[v + 1]]
        u = int(nbrs[rng.integers(len(nbrs))])
        out.add((min(u, v), max(u, v)))
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)


def removal_candidates(g: Graph, seed=0, restricted=None) -> CandidateSet:
    """All edges except one protected edge per node and those touching restricted nodes.

    Removing the entire returned set still leaves every node with an edge.
    """
    keep = protected_edges(g, seed)
    n = g.n
    prot_keys = keep[:, 0] * n + keep[:, 1]
    edge_keys = g.edges[:, 0] * n + g.edges[:, 1]
    mask = ~np.isin(edge_keys, prot_keys)
    blocked = np.zeros(n, dtype=bool)
    blocked[_as_node_set(restricted)] = True
    mask &= ~blocked[g.edges[:, 0]] & ~blocked[g.edges[:, 1]]
    pairs = g.edges[mask]
    provenance = {"kind": "remove", "seed": int(seed), "restricted": _as_node_set(restricted).tolist()}
    return CandidateSet(pairs.copy(), -np.ones(len(pairs), dtype=np.int64), provenance)


def restricted_nodes(n, fraction, seed=0) -> np.ndarray:
    """Uniformly pick ``round(fraction * n)`` nodes the attacker may not touch."""
    if not 0 <= fraction < 1:
        raise ValidationError(f"restricted fraction must lie in [0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=int(round(fraction * n)), replace=False))


def largest_connected_component(adjacency) -> tuple[sp.csr_matrix, np.ndarray]:
    """Symmetrise, binarise, drop self-loops and keep the largest component."""
    adj = sp.csr_matrix(adjacency)
    adj = adj.maximum(adj.T)
    adj.data[:] = 1.0
    adj = adj.tolil()
    adj.setdiag(0)
    adj = adj.tocsr()
    adj.eliminate_zeros()
    _, comp = sp.csgraph.connected_components(adj, directed=False)
    ids, counts = np.unique(comp, return_counts=True)
    keep = np.flatnonzero(comp == ids[counts.argmax()])
    return adj[keep][:, keep].tocsr(), keep
