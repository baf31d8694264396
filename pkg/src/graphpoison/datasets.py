"""Dataset loading and synthetic graphs.

Real datasets are looked up under ``$GRAPHPOISON_DATA`` (default ``./data``)
either as ``<name>.npz`` (CSR arrays ``adj_data``, ``adj_indices``,
``adj_indptr``, ``adj_shape`` and ``labels``) or as ``<name>.edges`` plus
``<name>.labels`` text files. All loaders restrict to the largest connected
component and relabel nodes ``0..n-1``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .exceptions import ValidationError
from .graph import Graph, largest_connected_component, load_edge_list, load_labels

KNOWN = {"cora": (2810, 15962), "citeseer": (2110, 7336), "polblogs": (1222, 33428)}


@dataclass
class Dataset:
    name: str
    graph: Graph
    labels: np.ndarray

    @property
    def n_classes(self):
        return int(len(np.unique(self.labels)))


class DatasetNotFound(FileNotFoundError):
    pass


def data_dir() -> Path:
    return Path(os.environ.get("GRAPHPOISON_DATA", "data"))


def _standardize(adj, labels, name):
    lcc, keep = largest_connected_component(adj)
    return Dataset(name, Graph(lcc), np.asarray(labels)[keep].astype(np.int64))


def load_npz(path, name=None) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        try:
            adj = sp.csr_matrix((z["adj_data"], z["adj_indices"], z["adj_indptr"]), shape=tuple(z["adj_shape"]))
            labels = z["labels"]
        except KeyError as exc:
            raise ValidationError(f"{path}: missing array {exc}") from exc
    return _standardize(adj, labels, name or Path(path).stem)


def load_text(edges_path, labels_path, name=None) -> Dataset:
    g = load_edge_list(edges_path)
    labels = load_labels(labels_path, g.n)
    return _standardize(g.adjacency, labels, name or Path(edges_path).stem)


def load_dataset(name, root=None) -> Dataset:
    """Load ``name`` from ``root`` (or the data directory); raises DatasetNotFound."""
    root = Path(root) if root is not None else data_dir()
    npz = root / f"{name}.npz"
    if npz.exists():
        return load_npz(npz, name)
    edges, labels = root / f"{name}.edges", root / f"{name}.labels"
    if edges.exists() and labels.exists():
        return load_text(edges, labels, name)
    raise DatasetNotFound(f"dataset {name!r} not found under {root}")


def sbm_graph(sizes, p_in, p_out, seed=0) -> Dataset:
    """Stochastic block model restricted to its largest connected component."""
    rng = np.random.default_rng(seed)
    sizes = np.asarray(sizes, dtype=np.int64)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    n = len(labels)
    probs = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < probs, k=1)
    adj = sp.csr_matrix(upper | upper.T, dtype=np.float64)
    return _standardize(adj, labels, f"sbm-{seed}")


def random_connected_graph(n, p, seed=0, max_tries=1000) -> Graph:
    """Erdos-Renyi G(n, p) resampled until connected."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = np.triu(rng.random((n, n)) < p, k=1)
        A = (upper | upper.T).astype(np.float64)
        ncomp = connected_components(sp.csr_matrix(A), directed=False)[0]
        if ncomp == 1:
            return Graph(A)
    raise ValidationError(f"no connected G({n}, {p}) after {max_tries} draws")
