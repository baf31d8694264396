"""Generalized graph spectra and their first-order updates under single edge flips.

The adjacency spectrum solves ``A u = lambda D u`` with ``U^T D U = I``; the
normalised Laplacian spectrum solves ``L u = lambda D u``. Both are obtained from
a dense symmetric eigendecomposition of the degree-normalised matrix.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ResourceError, SolverError, UsageError, ValidationError
from .graph import EdgeFlip, Graph

ADJACENCY = "adjacency"
LAPLACIAN_KINDS = ("rw", "sym", "unnormalized")
_KIND_CODES = {ADJACENCY: 0, "rw": 1, "sym": 2, "unnormalized": 3}


@dataclass
class GeneralizedSpectrum:
    """Eigenpairs of a graph operator.

    Attributes
    ----------
    lambdas : np.ndarray, shape [count]
        Eigenvalues, descending for ``kind="adjacency"`` and ascending for the
        Laplacian kinds.
    vectors : np.ndarray, shape [n, count]
        Column y is the eigenvector of ``lambdas[y]``. D-orthonormal for the
        ``adjacency`` and ``rw`` kinds, orthonormal otherwise.
    degrees : np.ndarray, shape [n]
    kind : str
    """

    lambdas: np.ndarray
    vectors: np.ndarray
    degrees: np.ndarray
    kind: str = ADJACENCY

    @property
    def n(self):
        return self.vectors.shape[0]

    @property
    def generalized_vectors(self):
        """Vectors solving the pencil with D on the right-hand side.

        For ``sym`` these are recovered as ``D^{-1/2} w``; for ``unnormalized``
        the orthonormal vectors of ``L`` are returned unchanged.
        """
        if self.kind == "sym":
            return self.vectors / np.sqrt(self.degrees)[:, None]
        return self.vectors

    def residuals(self, adjacency) -> np.ndarray:
        """Relative residual ``||A u - lambda D u|| / ||D u||`` per eigenpair.

        ``adjacency`` is replaced by the matching Laplacian for Laplacian kinds.
        """
        A = _dense(adjacency)
        d = self.degrees
        if self.kind == ADJACENCY:
            op, rhs = A, d[:, None] * self.vectors
        elif self.kind in ("rw", "sym"):
            op, rhs = np.diag(d) - A, d[:, None] * self.generalized_vectors
        else:
            op, rhs = np.diag(d) - A, self.vectors
        V = self.generalized_vectors
        res = op @ V - rhs * self.lambdas[None, :]
        return np.linalg.norm(res, axis=0) / np.linalg.norm(rhs, axis=0)


def _dense(adjacency):
    if isinstance(adjacency, Graph):
        return adjacency.toarray()
    if hasattr(adjacency, "toarray"):
        return adjacency.toarray()
    return np.asarray(adjacency, dtype=np.float64)


def _normalized_adjacency(g: Graph):
    inv_sqrt = 1.0 / np.sqrt(g.degrees.astype(np.float64))
    A = g.toarray()
    return inv_sqrt[:, None] * A * inv_sqrt[None, :], inv_sqrt


def _eigh(matrix):
    try:
        w, V = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"symmetric eigensolver failed: {exc}") from exc
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(V))):
        raise SolverError("symmetric eigensolver returned non-finite values")
    return w, V


def generalized_eigs(g: Graph) -> GeneralizedSpectrum:
    """Full spectrum of ``A u = lambda D u`` sorted by descending eigenvalue."""
    a_norm, inv_sqrt = _normalized_adjacency(g)
    w, W = _eigh(a_norm)
    order = np.argsort(-w, kind="stable")
    lambdas = w[order]
    vectors = inv_sqrt[:, None] * W[:, order]
    return GeneralizedSpectrum(lambdas, vectors, g.degrees.astype(np.float64), ADJACENCY)


def generalized_eigvals(g: Graph) -> np.ndarray:
    """Eigenvalues only, descending. Used when re-decomposing perturbed graphs.

    Goes through the same solver as :func:`generalized_eigs` so an unchanged
    graph reproduces the clean spectrum bit for bit.
    """
    a_norm, _ = _normalized_adjacency(g)
    w, _ = _eigh(a_norm)
    return w[np.argsort(-w, kind="stable")]


def laplacian_eigs(g: Graph, kind="rw") -> GeneralizedSpectrum:
    """Laplacian spectrum in ascending order.

    ``rw`` and ``sym`` share eigenvalues (those of ``L u = lambda D u``); they
    differ only in the returned vectors. ``unnormalized`` decomposes ``D - A``.
    """
    if kind not in LAPLACIAN_KINDS:
        raise UsageError(f"unknown Laplacian kind {kind!r}, expected one of {LAPLACIAN_KINDS}")
    d = g.degrees.astype(np.float64)
    if kind == "unnormalized":
        L = np.diag(d) - g.toarray()
        w, V = _eigh(L)
        return GeneralizedSpectrum(w, V, d, kind)
    a_norm, inv_sqrt = _normalized_adjacency(g)
    w, W = _eigh(np.eye(g.n) - a_norm)
    if kind == "rw":
        W = inv_sqrt[:, None] * W
    return GeneralizedSpectrum(w, W, d, kind)


def _flip_arrays(pairs, delta_w):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    delta_w = np.asarray(delta_w, dtype=np.float64).reshape(-1)
    if len(delta_w) == 1 and len(pairs) > 1:
        delta_w = np.repeat(delta_w, len(pairs))
    return pairs, delta_w


def eigenvalue_deltas(spec: GeneralizedSpectrum, pairs, delta_w) -> np.ndarray:
    """First-order eigenvalue changes for a batch of single flips.

    Returns an array of shape [len(pairs), count]; row c holds the change of every
    eigenvalue if only flip c were applied to the clean graph.
    """
    pairs, delta_w = _flip_arrays(pairs, delta_w)
    V = spec.generalized_vectors
    ui = V[pairs[:, 0]]
    uj = V[pairs[:, 1]]
    lam = spec.lambdas[None, :]
    dw = delta_w[:, None]
    if spec.kind == ADJACENCY:
        return dw * (2.0 * ui * uj - lam * (ui**2 + uj**2))
    if spec.kind in ("rw", "sym"):
        return dw * ((ui - uj) ** 2 - lam * (ui**2 + uj**2))
    return dw * (ui - uj) ** 2


def approx_eigenvalues_after_flip(spec: GeneralizedSpectrum, flip: EdgeFlip) -> np.ndarray:
    """``lambda_y + delta_lambda_y`` for every y, in the clean ordering."""
    if spec.kind != ADJACENCY:
        raise UsageError(f"expected an adjacency spectrum, got kind={spec.kind!r}")
    if max(flip.i, flip.j) >= spec.n:
        raise ValidationError(f"flip {flip.key} out of range for n={spec.n}")
    return spec.lambdas + eigenvalue_deltas(spec, [[flip.i, flip.j]], [flip.delta_w])[0]


def approx_laplacian_eigs_after_flip(spec: GeneralizedSpectrum, flip: EdgeFlip, kind) -> np.ndarray:
    """First-order Laplacian eigenvalues after ``flip`` in the clean ordering."""
    if kind not in LAPLACIAN_KINDS:
        raise UsageError(f"unknown Laplacian kind {kind!r}")
    normalized = {"rw", "sym"}
    if spec.kind != kind and not (spec.kind in normalized and kind in normalized):
        raise UsageError(f"spectrum kind {spec.kind!r} does not match requested {kind!r}")
    return spec.lambdas + eigenvalue_deltas(spec, [[flip.i, flip.j]], [flip.delta_w])[0]


def sum_of_powers(x, power):
    """Elementwise ``sum_{r=1}^{power} x**r``."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    term = np.ones_like(x)
    for _ in range(power):
        term = term * x
        acc += term
    return acc


@dataclass
class PinvCache:
    """Flip-independent pieces needed to update eigenvectors ``u_y``.

    The Moore-Penrose pseudo-inverse of ``A - lambda_y D`` is kept implicitly as
    ``Q_y G_y Q_y`` with ``G_y = U diag(1 / (lambda_z - lambda_y)) U^T`` (zero on
    the null block) and ``Q_y`` the Euclidean projector off the null space, so a
    single shared eigenbasis serves every cached index.
    """

    indices: np.ndarray
    inv_gaps: dict = field(default_factory=dict)
    null_bases: dict = field(default_factory=dict)
    null_coords: dict = field(default_factory=dict)
    u_dot_d: dict = field(default_factory=dict)
    pinv_u_dot_d: dict = field(default_factory=dict)
    basis: np.ndarray | None = None

    def __len__(self):
        return len(self.inv_gaps)

    def __contains__(self, y):
        return int(y) in self.inv_gaps

    def _require(self, y):
        if int(y) not in self.inv_gaps:
            raise UsageError(f"eigen-index {y} is not in the pseudo-inverse cache")

    def apply(self, y, x):
        """``(A - lambda_y D)^+ @ x`` for a vector or an (n, r) matrix."""
        self._require(y)
        y = int(y)
        U, N = self.basis, self.null_bases[y]
        x = np.asarray(x, dtype=np.float64)
        qx = x - N @ (N.T @ x)
        coeff = U.T @ qx
        coeff = coeff * (self.inv_gaps[y][:, None] if coeff.ndim == 2 else self.inv_gaps[y])
        gx = U @ coeff
        return gx - N @ (N.T @ gx)

    def rows(self, y, rows):
        """Rows ``rows`` of the (symmetric) pseudo-inverse, shape [len(rows), n]."""
        rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
        n = self.basis.shape[0]
        E = np.zeros((n, len(rows)))
        E[rows, np.arange(len(rows))] = 1.0
        return self.apply(y, E).T

    def row_for_all(self, t, ys=None):
        """Row ``t`` of every cached pseudo-inverse, shape [len(ys), n]."""
        ys = self.indices if ys is None else np.asarray(ys, dtype=np.int64)
        U = self.basis
        R = np.empty((U.shape[1], len(ys)))
        for c, y in enumerate(ys):
            self._require(y)
            N, C = self.null_bases[int(y)], self.null_coords[int(y)]
            R[:, c] = self.inv_gaps[int(y)] * (U[t] - C @ N[t])
        G = U @ R
        for c, y in enumerate(ys):
            N = self.null_bases[int(y)]
            G[:, c] -= N @ (N.T @ G[:, c])
        return G.T


def build_pinv_cache(g: Graph, spec: GeneralizedSpectrum, indices, rtol=1e-8, max_bytes=2 * 1024**3) -> PinvCache:
    """Precompute the pseudo-inverse data for the requested eigen-indices.

    Eigenvalues within ``rtol * max|lambda_z - lambda_y|`` of ``lambda_y`` are
    treated as part of the null space of ``A - lambda_y D``.
    """
    if spec.kind != ADJACENCY:
        raise UsageError("pseudo-inverse cache requires an adjacency spectrum")
    indices = np.unique(np.asarray(list(indices), dtype=np.int64))
    if len(indices) and (indices.min() < 0 or indices.max() >= len(spec.lambdas)):
        raise UsageError("eigen-index out of range")
    n, count = spec.vectors.shape
    required = 8 * len(indices) * (2 * count + 3 * n)
    if max_bytes is not None and required > max_bytes:
        raise ResourceError(f"pseudo-inverse cache for {len(indices)} indices exceeds budget {max_bytes}", required)
    cache = PinvCache(indices=indices, basis=spec.vectors)
    if not len(indices):
        return cache
    U, lam, d = spec.vectors, spec.lambdas, spec.degrees
    for y in indices.tolist():
        gaps = lam - lam[y]
        null = np.abs(gaps) <= rtol * max(np.abs(gaps).max(), 1.0)
        null[y] = True
        inv = np.zeros_like(gaps)
        inv[~null] = 1.0 / gaps[~null]
        N, _ = np.linalg.qr(U[:, null])
        cache.inv_gaps[y] = inv
        cache.null_bases[y] = N
        cache.null_coords[y] = U.T @ N
        cache.u_dot_d[y] = U[:, y] * d
        cache.pinv_u_dot_d[y] = cache.apply(y, cache.u_dot_d[y])
    return cache


def approx_eigenvector_after_flip(cache: PinvCache, spec: GeneralizedSpectrum, g: Graph, flip: EdgeFlip, y) -> np.ndarray:
    """First-order estimate of the y-th generalized eigenvector after ``flip``."""
    y = int(y)
    cache._require(y)
    if flip.delta_w != 1 - 2 * int(g.has_edge(flip.i, flip.j)):
        raise ValidationError(f"flip {flip.key} inconsistent with the graph")
    u, lam = spec.vectors[:, y], spec.lambdas[y]
    i, j, dw = flip.i, flip.j, flip.delta_w
    d_lam = eigenvalue_deltas(spec, [[i, j]], [dw])[0, y]
    x = -d_lam * cache.u_dot_d[y]
    x = x.copy()
    x[i] += u[j] - lam * u[i]
    x[j] += u[i] - lam * u[j]
    return u - dw * cache.apply(y, x)


_MAGIC = b"GPSPEC\x00\x00"
_HEADER = struct.Struct("<8sIIQQ")
_VERSION = 1


def save_spectrum(spec: GeneralizedSpectrum, path):
    """Binary cache: header (magic, version, kind, n, count) then little-endian
    float64 eigenvalues, degrees and the row-major vector matrix."""
    n, count = spec.vectors.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, _KIND_CODES[spec.kind], n, count))
        fh.write(np.ascontiguousarray(spec.lambdas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spec.degrees, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(spec.vectors, dtype="<f8").tobytes())


def load_spectrum(path) -> GeneralizedSpectrum:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValidationError(f"{path}: truncated spectrum cache")
    magic, version, kind_code, n, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValidationError(f"{path}: not a spectrum cache")
    if version != _VERSION:
        raise ValidationError(f"{path}: unsupported cache version {version}")
    expected = _HEADER.size + 8 * (count + n + n * count)
    if len(raw) != expected:
        raise ValidationError(f"{path}: size {len(raw)} does not match header ({expected})")
    kind = {v: k for k, v in _KIND_CODES.items()}[kind_code]
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    lambdas = body[:count].astype(np.float64)
    degrees = body[count:count + n].astype(np.float64)
    vectors = body[count + n:].reshape(n, count).astype(np.float64)
    return GeneralizedSpectrum(lambdas, vectors, degrees, kind)
