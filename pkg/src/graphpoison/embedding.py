"""DeepWalk as matrix factorisation, the SVD-free surrogate and spectral embeddings."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import SolverError, UsageError, ValidationError
from .spectrum import (
    GeneralizedSpectrum,
    generalized_eigs,
    laplacian_eigs,
    sum_of_powers,
)
from .validation import check_graph, check_positive_int


@dataclass
class CoocFactorization:
    """Co-occurrence matrices DeepWalk implicitly factorises.

    ``S = (sum_r P^r) D^{-1}``, ``M = vol / (T b) * S`` and ``Mhat = log(max(M, 1))``.
    """

    window: int
    negatives: int
    S: np.ndarray
    M: np.ndarray
    Mhat: np.ndarray
    volume: int


@dataclass
class EmbeddingMatrix:
    Z: np.ndarray
    kind: str
    singular_values: np.ndarray | None = None

    @property
    def shape(self):
        return self.Z.shape


def transition_power_sum(g, window) -> np.ndarray:
    """Dense ``sum_{r=1}^{window} P^r`` built by repeated sparse products."""
    P = sp.diags(1.0 / g.degrees) @ g.adjacency
    P = P.tocsr()
    Pr = P.toarray()
    acc = Pr.copy()
    for _ in range(window - 1):
        Pr = P @ Pr
        acc += Pr
    return acc


def build_cooc(g, window=5, negatives=5) -> CoocFactorization:
    g = check_graph(g)
    window = check_positive_int(window, "window")
    negatives = check_positive_int(negatives, "negatives")
    S = transition_power_sum(g, window) / g.degrees[None, :]
    M = g.volume / (window * negatives) * S
    Mhat = np.log(np.maximum(M, 1.0))
    return CoocFactorization(window, negatives, S, M, Mhat, g.volume)


def reconstruct_S_from_spectrum(spec: GeneralizedSpectrum, window) -> np.ndarray:
    """``U diag(sum_r Lambda^r) U^T`` from a full generalized spectrum."""
    if spec.vectors.shape[1] != spec.n:
        raise UsageError("reconstruction needs the full spectrum")
    U = spec.vectors
    return (U * sum_of_powers(spec.lambdas, window)[None, :]) @ U.T


def symmetric_svd(X):
    """SVD of a symmetric matrix via its eigendecomposition.

    Returns ``(U, s, Vt)`` with singular values sorted descending (ties keep the
    solver order). The sign of each left vector is fixed so its largest
    magnitude entry is positive.
    """
    try:
        w, W = np.linalg.eigh(X)
    except np.linalg.LinAlgError as exc:
        raise SolverError(str(exc)) from exc
    order = np.argsort(-np.abs(w), kind="stable")
    w, W = w[order], W[:, order]
    W = _fix_signs(W)
    s = np.abs(w)
    signs = np.where(w < 0, -1.0, 1.0)
    return W, s, (W * signs[None, :]).T


def _fix_signs(U):
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs[None, :]


def singular_values(X) -> np.ndarray:
    """All singular values of a symmetric matrix, descending."""
    try:
        w = np.linalg.eigvalsh(X)
    except np.linalg.LinAlgError as exc:
        raise SolverError(str(exc)) from exc
    return np.sort(np.abs(w))[::-1]


def svd_embedding(f: CoocFactorization, K) -> EmbeddingMatrix:
    """``Z = U_K Sigma_K^{1/2}`` from the SVD of ``Mhat``."""
    n = f.Mhat.shape[0]
    if not 1 <= K <= n:
        raise UsageError(f"K must lie in [1, {n}], got {K}")
    U, s, _ = symmetric_svd(f.Mhat)
    Z = U[:, :K] * np.sqrt(s[:K])[None, :]
    return EmbeddingMatrix(Z, "svd", s)


def surrogate_columns(spec: GeneralizedSpectrum, window, K=None) -> np.ndarray:
    """Eigen-indices of the K largest ``|sum_r lambda^r|`` (all indices if K is None)."""
    weights = np.abs(sum_of_powers(spec.lambdas, window))
    order = np.argsort(-weights, kind="stable")
    return order if K is None else order[:K]


def surrogate_embedding(spec: GeneralizedSpectrum, window, K=None) -> EmbeddingMatrix:
    """SVD-free embedding ``U diag(sum_r Lambda^r)``.

    With ``K`` given, only the K columns of largest ``|sum_r lambda^r|`` are kept.
    """
    cols = np.arange(len(spec.lambdas)) if K is None else surrogate_columns(spec, window, K)
    weights = sum_of_powers(spec.lambdas[cols], window)
    return EmbeddingMatrix(spec.vectors[:, cols] * weights[None, :], "surrogate")


def spectral_embedding(g, K, kind="rw") -> EmbeddingMatrix:
    """Eigenvectors of the K smallest Laplacian eigenvalues."""
    g = check_graph(g)
    if not 1 <= K <= g.n:
        raise UsageError(f"K must lie in [1, {g.n}], got {K}")
    spec = laplacian_eigs(g, kind)
    return EmbeddingMatrix(spec.vectors[:, :K].copy(), f"spectral-{kind}", spec.lambdas[:K].copy())


def export_embedding_csv(emb, path):
    Z = emb.Z if isinstance(emb, EmbeddingMatrix) else np.asarray(emb)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id"] + [f"z_{k}" for k in range(Z.shape[1])])
        for v, row in enumerate(Z):
            writer.writerow([v] + [repr(float(x)) for x in row])


_EMB_MAGIC = b"GPEMBD\x00\x00"
_EMB_HEADER = struct.Struct("<8sIQQ")


def export_embedding_binary(emb, path):
    """Header (magic, version, n, K) followed by row-major little-endian float64."""
    Z = emb.Z if isinstance(emb, EmbeddingMatrix) else np.asarray(emb)
    with open(path, "wb") as fh:
        fh.write(_EMB_HEADER.pack(_EMB_MAGIC, 1, Z.shape[0], Z.shape[1]))
        fh.write(np.ascontiguousarray(Z, dtype="<f8").tobytes())


def load_embedding_binary(path) -> np.ndarray:
    raw = open(path, "rb").read()
    magic, version, n, k = _EMB_HEADER.unpack_from(raw)
    if magic != _EMB_MAGIC or version != 1:
        raise ValidationError(f"{path}: not an embedding file")
    return np.frombuffer(raw, dtype="<f8", offset=_EMB_HEADER.size).reshape(n, k).copy()


class DeepWalkSVD(TransformerMixin, BaseEstimator):
    """DeepWalk embeddings by factorising ``Mhat`` instead of sampling walks.

    Parameters
    ----------
    n_components : int
        Embedding dimension K.
    window : int
        Co-occurrence window T.
    negatives : int
        Number of negative samples b.

    Attributes
    ----------
    embedding_ : np.ndarray, shape [n, n_components]
    singular_values_ : np.ndarray, shape [n]
    loss_ : float
        Frobenius error of the best rank-K approximation of ``Mhat``.
    """

    def __init__(self, n_components=64, window=5, negatives=5):
        self.n_components = n_components
        self.window = window
        self.negatives = negatives

    def fit(self, X, y=None):
        g = check_graph(X)
        factors = build_cooc(g, self.window, self.negatives)
        emb = svd_embedding(factors, self.n_components)
        self.embedding_ = emb.Z
        self.singular_values_ = emb.singular_values
        self.loss_ = float(np.sqrt(np.sum(emb.singular_values[self.n_components:] ** 2)))
        self.n_nodes_ = g.n
        return self

    def transform(self, X=None):
        check_is_fitted(self, "embedding_")
        return self.embedding_


class SurrogateEmbedding(TransformerMixin, BaseEstimator):
    """``U diag(sum_r Lambda^r)`` restricted to the K dominant columns."""

    def __init__(self, n_components=64, window=5):
        self.n_components = n_components
        self.window = window

    def fit(self, X, y=None):
        g = check_graph(X)
        self.spectrum_ = generalized_eigs(g)
        self.columns_ = surrogate_columns(self.spectrum_, self.window, self.n_components)
        self.embedding_ = surrogate_embedding(self.spectrum_, self.window, self.n_components).Z
        return self

    def transform(self, X=None):
        check_is_fitted(self, "embedding_")
        return self.embedding_


class SpectralEmbedding(TransformerMixin, BaseEstimator):
    """Eigenvectors of the smallest Laplacian eigenvalues."""

    def __init__(self, n_components=64, kind="rw"):
        self.n_components = n_components
        self.kind = kind

    def fit(self, X, y=None):
        emb = spectral_embedding(check_graph(X), self.n_components, self.kind)
        self.embedding_ = emb.Z
        self.eigenvalues_ = emb.singular_values
        return self

    def transform(self, X=None):
        check_is_fitted(self, "embedding_")
        return self.embedding_
