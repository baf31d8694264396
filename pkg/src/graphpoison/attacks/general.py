"""Untargeted poisoning: loss estimates, greedy selection and baselines."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ..embedding import build_cooc, singular_values
from ..exceptions import CapacityError, SolverError, UsageError, ValidationError
from ..graph import (
    CandidateSet,
    EdgeFlip,
    Graph,
    apply_flips,
    removal_candidates,
    restricted_nodes,
    sample_add_candidates,
)
from ..spectrum import (
    ADJACENCY,
    LAPLACIAN_KINDS,
    GeneralizedSpectrum,
    eigenvalue_deltas,
    generalized_eigs,
    laplacian_eigs,
    sum_of_powers,
)
from ..validation import check_graph, check_positive_int

SCORERS = ("dw2", "dw3", "sc")
STRATEGIES = ("dw2", "dw3", "sc", "abr", "rnd", "deg", "eig")


@dataclass
class AttackPlan:
    """Scored candidates in selection order; the first ``n_flips`` are chosen."""

    strategy: str
    pairs: np.ndarray
    delta_w: np.ndarray
    scores: np.ndarray
    n_flips: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        self.delta_w = np.asarray(self.delta_w, dtype=np.int64).reshape(-1)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.scores)):
            raise ValidationError("attack plan scores must be finite")
        if self.n_flips > len(self.pairs):
            raise CapacityError(f"plan chooses {self.n_flips} flips from {len(self.pairs)} candidates")

    @property
    def chosen(self) -> list[EdgeFlip]:
        return [
            EdgeFlip(int(i), int(j), int(dw))
            for (i, j), dw in zip(self.pairs[: self.n_flips], self.delta_w[: self.n_flips])
        ]

    def chosen_pairs(self) -> np.ndarray:
        return self.pairs[: self.n_flips]

    def apply(self, g: Graph) -> Graph:
        return apply_flips(g, self.chosen)

    def to_dict(self, include_unchosen=True):
        m = len(self.pairs) if include_unchosen else self.n_flips
        flips = [
            [int(i), int(j), int(dw), float(s)]
            for (i, j), dw, s in zip(self.pairs[:m], self.delta_w[:m], self.scores[:m])
        ]
        return {"strategy": self.strategy, "n_flips": int(self.n_flips), "config": self.config, "flips": flips}

    def to_json(self, path=None, include_unchosen=True):
        text = json.dumps(self.to_dict(include_unchosen), indent=1, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, data):
        flips = np.asarray(data["flips"], dtype=np.float64).reshape(-1, 4)
        return cls(
            data["strategy"],
            flips[:, :2].astype(np.int64),
            flips[:, 2].astype(np.int64),
            flips[:, 3],
            int(data["n_flips"]),
            dict(data.get("config", {})),
        )

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def rank_by_score(pairs, scores, descending=True) -> np.ndarray:
    """Order indices by score with ties broken by ascending (i, j)."""
    pairs = np.asarray(pairs).reshape(-1, 2)
    key = -np.asarray(scores) if descending else np.asarray(scores)
    return np.lexsort((pairs[:, 1], pairs[:, 0], key))


# --- losses ------------------------------------------------------------------


def loss_dw1(g, K, window=5, negatives=5) -> float:
    """Frobenius error of the best rank-K approximation of ``Mhat``."""
    g = check_graph(g)
    s = singular_values(build_cooc(g, window, negatives).Mhat)
    return _tail_norm(s, K)


def _tail_norm(sorted_desc, K):
    if not 0 <= K <= len(sorted_desc):
        raise UsageError(f"K must lie in [0, {len(sorted_desc)}], got {K}")
    return float(np.sqrt(np.sum(sorted_desc[K:] ** 2)))


@dataclass
class MhatEigen:
    """Eigenpairs of the clean ``Mhat`` ordered by descending magnitude."""

    values: np.ndarray
    vectors: np.ndarray
    window: int
    negatives: int


def mhat_eigs(g, window=5, negatives=5) -> MhatEigen:
    Mhat = build_cooc(check_graph(g), window, negatives).Mhat
    try:
        w, V = np.linalg.eigh(Mhat)
    except np.linalg.LinAlgError as exc:
        raise SolverError(str(exc)) from exc
    order = np.argsort(-np.abs(w), kind="stable")
    return MhatEigen(w[order], V[:, order], window, negatives)


def loss_dw2_for_flip(g, eig: MhatEigen, flips, K, window=5, negatives=5) -> float:
    """Rebuild ``Mhat`` after ``flips`` and project it on the frozen clean tail eigenvectors."""
    if isinstance(flips, EdgeFlip):
        flips = [flips]
    flips = list(flips)
    g = check_graph(g)
    if not flips:
        return _tail_norm(np.abs(eig.values), K)
    Mhat_new = build_cooc(apply_flips(g, flips), window, negatives).Mhat
    tail = eig.vectors[:, K:]
    proj = np.einsum("ip,ip->p", tail, Mhat_new @ tail)
    return float(np.sqrt(np.sum(proj**2)))


def _min_degree_after(degrees, pairs, delta_w):
    """Smallest degree after each single flip, from the three smallest clean degrees."""
    k = min(3, len(degrees))
    low = np.argsort(degrees, kind="stable")[:k]
    vals = degrees[low].astype(np.float64)
    other = (low[None, :] != pairs[:, :1]) & (low[None, :] != pairs[:, 1:2])
    rest = np.where(other, vals[None, :], np.inf).min(axis=1)
    di = degrees[pairs[:, 0]] + delta_w
    dj = degrees[pairs[:, 1]] + delta_w
    return np.minimum(rest, np.minimum(di, dj))


def _dw3_chunk(lambdas, vectors, degrees, volume, pairs, delta_w, K, window, negatives):
    n = vectors.shape[0]
    ui, uj = vectors[pairs[:, 0]], vectors[pairs[:, 1]]
    lam = lambdas[None, :] + delta_w[:, None] * (2.0 * ui * uj - lambdas[None, :] * (ui**2 + uj**2))
    sq = sum_of_powers(lam, window) ** 2
    # the n-K smallest magnitudes form the tail of the descending order
    if 0 < K < n:
        sq = np.partition(sq, n - K - 1, axis=1)
    tail = sq[:, : n - K].sum(axis=1)
    d_min = _min_degree_after(degrees, pairs, delta_w)
    return (volume + 2.0 * delta_w) / (window * negatives) * np.sqrt(tail) / d_min


def dw3_scores(spec: GeneralizedSpectrum, g, pairs, delta_w, K, window=5, negatives=5, n_jobs=1, chunk_size=512):
    """Closed-form loss estimate for every candidate flip.

    Candidates are independent, so chunks are scored in parallel with ``n_jobs``
    workers and concatenated in input order.
    """
    g = check_graph(g)
    if spec.kind != ADJACENCY:
        raise UsageError("dw3 scoring needs the adjacency spectrum")
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    delta_w = np.asarray(delta_w, dtype=np.float64).reshape(-1)
    if not 0 <= K <= g.n:
        raise UsageError(f"K must lie in [0, {g.n}], got {K}")
    d_min = _min_degree_after(g.degrees, pairs, delta_w)
    if np.any(d_min < 1):
        bad = pairs[np.argmax(d_min < 1)]
        raise ValidationError(f"flip {tuple(bad)} would create a singleton node")
    if len(pairs) == 0:
        return np.zeros(0)
    bounds = range(0, len(pairs), chunk_size)
    args = (spec.lambdas, spec.vectors, g.degrees, float(g.volume))
    if n_jobs == 1:
        parts = [_dw3_chunk(*args, pairs[s:s + chunk_size], delta_w[s:s + chunk_size], K, window, negatives) for s in bounds]
    else:
        parts = Parallel(n_jobs=n_jobs)(
            delayed(_dw3_chunk)(*args, pairs[s:s + chunk_size], delta_w[s:s + chunk_size], K, window, negatives)
            for s in bounds
        )
    return np.concatenate(parts)


def loss_dw3_for_flip(spec: GeneralizedSpectrum, g, flip: EdgeFlip, K, window=5, negatives=5) -> float:
    g = check_graph(g)
    if flip.delta_w != 1 - 2 * int(g.has_edge(flip.i, flip.j)):
        raise ValidationError(f"flip {flip.key} inconsistent with the graph")
    return float(dw3_scores(spec, g, [[flip.i, flip.j]], [flip.delta_w], K, window, negatives)[0])


def dw3_clean_loss(spec: GeneralizedSpectrum, g, K, window=5, negatives=5) -> float:
    """The same estimate with no flip applied (upper bound on the loss of ``M``)."""
    g = check_graph(g)
    sq = np.sort(sum_of_powers(spec.lambdas, window) ** 2)[::-1]
    return float(g.volume / (window * negatives) * np.sqrt(sq[K:].sum()) / g.min_degree)


def sc_scores(spec: GeneralizedSpectrum, pairs, delta_w, K) -> np.ndarray:
    """Sum of the K smallest first-order Laplacian eigenvalues after each flip."""
    if spec.kind not in LAPLACIAN_KINDS:
        raise UsageError("spectral loss needs a Laplacian spectrum")
    if not 1 <= K <= len(spec.lambdas):
        raise UsageError(f"K must lie in [1, {len(spec.lambdas)}], got {K}")
    out = []
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    delta_w = np.asarray(delta_w, dtype=np.float64).reshape(-1)
    for s in range(0, len(pairs), 512):
        lam = spec.lambdas[None, :] + eigenvalue_deltas(spec, pairs[s:s + 512], delta_w[s:s + 512])
        if K < lam.shape[1]:
            lam = np.partition(lam, K - 1, axis=1)
        out.append(lam[:, :K].sum(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


def loss_sc_for_flip(spec: GeneralizedSpectrum, flip: EdgeFlip, K, kind) -> float:
    normalized = {"rw", "sym"}
    if spec.kind != kind and not (spec.kind in normalized and kind in normalized):
        raise UsageError(f"spectrum kind {spec.kind!r} does not match requested {kind!r}")
    return float(sc_scores(spec, [[flip.i, flip.j]], [flip.delta_w], K)[0])


def loss_sc_exact(g, K, kind="rw") -> float:
    return float(laplacian_eigs(check_graph(g), kind).lambdas[:K].sum())


# --- drivers -----------------------------------------------------------------


def score_candidates(g, candidates: CandidateSet, scorer="dw3", K=32, window=5, negatives=5,
                     laplacian="rw", spectrum=None, n_jobs=1):
    """Score every candidate against the clean graph (no re-scoring between picks)."""
    if scorer not in SCORERS:
        raise UsageError(f"unknown scorer {scorer!r}, expected one of {SCORERS}")
    if scorer == "dw3":
        spec = spectrum if spectrum is not None else generalized_eigs(g)
        return dw3_scores(spec, g, candidates.pairs, candidates.delta_w, K, window, negatives, n_jobs=n_jobs)
    if scorer == "sc":
        spec = spectrum if spectrum is not None else laplacian_eigs(g, laplacian)
        return sc_scores(spec, candidates.pairs, candidates.delta_w, K)
    eig = spectrum if spectrum is not None else mhat_eigs(g, window, negatives)
    return np.array([loss_dw2_for_flip(g, eig, f, K, window, negatives) for f in candidates])


def general_attack(g, f, candidates: CandidateSet, scorer="dw3", K=32, window=5, negatives=5,
                   laplacian="rw", spectrum=None, n_jobs=1) -> AttackPlan:
    """Greedily pick the ``f`` candidates with the highest estimated loss."""
    g = check_graph(g)
    f = check_positive_int(f, "f", allow_zero=True)
    if len(candidates) < f:
        raise CapacityError(f"need {f} candidates, have {len(candidates)}")
    scores = score_candidates(g, candidates, scorer, K, window, negatives, laplacian, spectrum, n_jobs)
    order = rank_by_score(candidates.pairs, scores)
    config = {"K": K, "T": window, "b": negatives, "candidates": dict(candidates.provenance)}
    if scorer == "sc":
        config["laplacian"] = laplacian
    return AttackPlan(scorer, candidates.pairs[order], candidates.delta_w[order], scores[order], f, config)


def add_by_remove(g, f, candidates: CandidateSet, c=4, scorer="dw3", seed=0, K=32, window=5,
                  negatives=5, laplacian="rw", n_jobs=1) -> AttackPlan:
    """Add ``c*f`` random candidates, then retract the ``(c-1)*f`` weakest.

    The strength of an added edge is how much the estimated loss of the augmented
    graph drops when that edge alone is removed again.
    """
    g = check_graph(g)
    f = check_positive_int(f, "f", allow_zero=True)
    c = check_positive_int(c, "c")
    if np.any(candidates.delta_w != 1):
        raise ValidationError("add-by-remove needs addition candidates")
    if len(candidates) < c * f:
        raise CapacityError(f"need {c * f} candidates, have {len(candidates)}")
    config = {"K": K, "T": window, "b": negatives, "c": c, "seed": int(seed), "scorer": scorer,
              "candidates": dict(candidates.provenance)}
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(len(candidates), size=c * f, replace=False))
    added = candidates.subset(pick)
    if c == 1 or f == 0:
        return AttackPlan("abr", added.pairs, added.delta_w, np.zeros(len(added)), f, config)
    g_plus = apply_flips(g, added)
    retract = CandidateSet(added.pairs, -np.ones(len(added), dtype=np.int64))
    if scorer == "dw3":
        spec = generalized_eigs(g_plus)
        base = dw3_clean_loss(spec, g_plus, K, window, negatives)
        removal_loss = dw3_scores(spec, g_plus, retract.pairs, retract.delta_w, K, window, negatives, n_jobs=n_jobs)
    elif scorer == "sc":
        spec = laplacian_eigs(g_plus, laplacian)
        base = float(spec.lambdas[:K].sum())
        removal_loss = sc_scores(spec, retract.pairs, retract.delta_w, K)
    elif scorer == "dw2":
        eig = mhat_eigs(g_plus, window, negatives)
        base = _tail_norm(np.abs(eig.values), K)
        removal_loss = np.array([loss_dw2_for_flip(g_plus, eig, fl, K, window, negatives) for fl in retract])
    else:
        raise UsageError(f"unknown scorer {scorer!r}")
    contribution = base - removal_loss
    order = rank_by_score(added.pairs, contribution)
    return AttackPlan("abr", added.pairs[order], added.delta_w[order], contribution[order], f, config)


def line_graph(g) -> sp.csr_matrix:
    """Adjacency of the line graph; vertex k is edge ``g.edges[k]``."""
    g = check_graph(g)
    m = g.num_edges
    rows = np.concatenate([g.edges[:, 0], g.edges[:, 1]])
    cols = np.concatenate([np.arange(m), np.arange(m)])
    inc = sp.csr_matrix((np.ones(2 * m), (rows, cols)), shape=(g.n, m))
    B = (inc.T @ inc).tolil()
    B.setdiag(0)
    B = B.tocsr()
    B.eliminate_zeros()
    return B


def edge_eigencentrality(g, decimals=12) -> np.ndarray:
    """Principal eigenvector of the line graph, one entry per edge, max-normalised.

    Rounded to ``decimals`` so equal centralities compare equal for tie-breaking.
    """
    B = line_graph(g)
    m = B.shape[0]
    if m <= 600:
        w, V = np.linalg.eigh(B.toarray())
        vec = V[:, np.argmax(w)]
    else:
        try:
            _, V = spla.eigsh(B.astype(np.float64), k=1, which="LA", v0=np.ones(m), tol=1e-12)
        except spla.ArpackError as exc:
            raise SolverError(str(exc)) from exc
        vec = V[:, 0]
    vec = np.abs(vec)
    return np.round(vec / vec.max(), decimals)


def baseline_attack(g, f, kind="rnd", direction="remove", seed=0, candidates=None,
                    n_candidates=20000, restricted=None) -> AttackPlan:
    """Random, line-graph degree or line-graph eigencentrality baselines.

    Without explicit ``candidates`` the removal set (with protected edges) or a
    sampled addition set is built from ``seed``.
    """
    g = check_graph(g)
    f = check_positive_int(f, "f", allow_zero=True)
    if kind not in ("rnd", "deg", "eig"):
        raise UsageError(f"unknown baseline {kind!r}")
    if direction not in ("add", "remove"):
        raise UsageError(f"direction must be 'add' or 'remove', got {direction!r}")
    if kind == "eig" and direction == "add":
        raise UsageError("eigencentrality baseline is not supported for additions")
    if candidates is None:
        if direction == "remove":
            candidates = removal_candidates(g, seed, restricted)
        else:
            candidates = sample_add_candidates(g, n_candidates, seed, restricted)
    if len(candidates) < f:
        raise CapacityError(f"need {f} candidates, have {len(candidates)}")
    pairs = candidates.pairs
    config = {"direction": direction, "seed": int(seed), "candidates": dict(candidates.provenance)}
    if kind == "rnd":
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(pairs))
        scores = np.zeros(len(pairs))
        return AttackPlan("rnd", pairs[order], candidates.delta_w[order], scores, f, config)
    if kind == "deg":
        scores = (g.degrees[pairs[:, 0]] + g.degrees[pairs[:, 1]] - 2).astype(np.float64)
    else:
        cent = edge_eigencentrality(g)
        keys = g.edges[:, 0] * g.n + g.edges[:, 1]
        pos = np.searchsorted(keys, pairs[:, 0] * g.n + pairs[:, 1])
        scores = cent[pos]
    order = rank_by_score(pairs, scores)
    return AttackPlan(kind, pairs[order], candidates.delta_w[order], scores[order], f, config)


def plan_attack(g, strategy, flips, n_candidates=20000, restricted_fraction=0.0, seed=0, K=32,
                window=5, negatives=5, abr_multiplier=4, laplacian="rw", n_jobs=1) -> AttackPlan:
    """Build the candidate set and run one strategy.

    ``flips`` is signed: negative removes ``|flips|`` edges, positive adds.
    """
    g = check_graph(g)
    if strategy not in STRATEGIES:
        raise UsageError(f"unknown strategy {strategy!r}, expected one of {STRATEGIES}")
    if flips == 0:
        raise ValidationError("flip budget must be non-zero")
    direction = "add" if flips > 0 else "remove"
    if strategy == "eig" and direction == "add":
        raise UsageError("eigencentrality baseline is not supported for additions")
    f = abs(int(flips))
    restricted = restricted_nodes(g.n, restricted_fraction, seed) if restricted_fraction else None
    if direction == "remove":
        if strategy == "abr":
            raise UsageError("add-by-remove only applies to additions")
        candidates = removal_candidates(g, seed, restricted)
    else:
        size = n_candidates
        if strategy == "abr":
            size = max(n_candidates, abr_multiplier * f)
        candidates = sample_add_candidates(g, size, seed, restricted)
    if strategy in ("rnd", "deg", "eig"):
        plan = baseline_attack(g, f, strategy, direction, seed, candidates)
    elif strategy == "abr":
        plan = add_by_remove(g, f, candidates, abr_multiplier, "dw3", seed, K, window, negatives, n_jobs=n_jobs)
    else:
        plan = general_attack(g, f, candidates, strategy, K, window, negatives, laplacian, n_jobs=n_jobs)
    plan.config.update({"flips": int(flips), "restricted_fraction": restricted_fraction, "seed": int(seed)})
    return plan


class GeneralAttack(BaseEstimator):
    """Estimator wrapper around :func:`plan_attack`.

    ``fit`` scores candidates on the clean graph and stores ``plan_``;
    ``transform`` returns the poisoned graph.
    """

    def __init__(self, strategy="dw3", n_flips=-500, n_candidates=20000, n_components=32, window=5,
                 negatives=5, abr_multiplier=4, restricted_fraction=0.0, laplacian="rw",
                 random_state=0, n_jobs=1):
        self.strategy = strategy
        self.n_flips = n_flips
        self.n_candidates = n_candidates
        self.n_components = n_components
        self.window = window
        self.negatives = negatives
        self.abr_multiplier = abr_multiplier
        self.restricted_fraction = restricted_fraction
        self.laplacian = laplacian
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        g = check_graph(X)
        self.plan_ = plan_attack(
            g, self.strategy, self.n_flips, self.n_candidates, self.restricted_fraction,
            self.random_state, self.n_components, self.window, self.negatives,
            self.abr_multiplier, self.laplacian, self.n_jobs,
        )
        self.graph_fingerprint_ = g.fingerprint()
        return self

    def transform(self, X):
        g = check_graph(X)
        if g.fingerprint() != getattr(self, "graph_fingerprint_", None):
            raise ValidationError("transform must receive the graph the attack was fitted on")
        return self.plan_.apply(g)

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
