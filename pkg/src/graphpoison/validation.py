"""Input validation helpers shared by estimators and functions."""

import numbers

import numpy as np
import scipy.sparse as sp

from .exceptions import ValidationError
from .graph import Graph


def check_graph(X) -> Graph:
    """Coerce a Graph, sparse matrix or dense array into a validated :class:`Graph`."""
    if isinstance(X, Graph):
        return X
    if sp.issparse(X) or isinstance(X, np.ndarray):
        return Graph(X)
    if hasattr(X, "__array__"):
        return Graph(np.asarray(X))
    raise ValidationError(f"cannot interpret {type(X).__name__} as a graph")


def check_positive_int(value, name, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValidationError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return int(value)


def check_labels(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValidationError(f"labels must have shape ({n},), got {labels.shape}")
    return labels.astype(np.int64)
