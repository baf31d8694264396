import numpy as np
import pytest
from hypothesis import strategies as st

from graphpoison.datasets import random_connected_graph
from graphpoison.graph import Graph


def triangle():
    return Graph.from_edges([(0, 1), (1, 2), (0, 2)], 3)


def path(n):
    return Graph.from_edges([(k, k + 1) for k in range(n - 1)], n)


def star(leaves):
    return Graph.from_edges([(0, k) for k in range(1, leaves + 1)], leaves + 1)


def barbell(k=5):
    """Two K_k cliques joined by a single bridge edge."""
    edges = [(i, j) for i in range(k) for j in range(i + 1, k)]
    edges += [(k + i, k + j) for i in range(k) for j in range(i + 1, k)]
    edges.append((k - 1, k))
    return Graph.from_edges(edges, 2 * k)


@st.composite
def connected_graphs(draw, min_n=4, max_n=20):
    n = draw(st.integers(min_n, max_n))
    p = draw(st.floats(0.25, 0.7))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_connected_graph(n, p, seed)


def non_edges(g):
    A = g.toarray()
    i, j = np.triu_indices(g.n, 1)
    keep = A[i, j] == 0
    return np.column_stack([i[keep], j[keep]])


@pytest.fixture
def small_graph():
    return random_connected_graph(14, 0.35, seed=7)
