"""Targeted attacks on a node's class and on link-prediction scores.

Both score candidate flips through the surrogate embedding ``U diag(sum_r Lambda^r)``
with first-order updates of the eigenvalues and of the K used eigenvectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..embedding import DeepWalkSVD, surrogate_columns, surrogate_embedding
from ..exceptions import CapacityError, ResourceError, ValidationError
from ..graph import CandidateSet, EdgeFlip, Graph, apply_flips, removal_candidates, sample_add_candidates
from ..spectrum import (
    GeneralizedSpectrum,
    PinvCache,
    build_pinv_cache,
    generalized_eigs,
    sum_of_powers,
)
from ..evaluation.classification import LogisticRegressionGD, stratified_split
from ..evaluation.metrics import average_precision, average_precision_batch, margins_from_probs
from ..validation import check_graph, check_labels, check_positive_int
from .general import AttackPlan, rank_by_score


@dataclass
class MarginReport:
    target: int
    true_class: int
    budget: int
    candidate_pairs: np.ndarray
    candidate_delta_w: np.ndarray
    candidate_margins: np.ndarray
    chosen: list
    clean_margin: float = float("nan")
    final_margin: float = float("nan")

    @property
    def misclassified(self) -> bool:
        return self.final_margin < 0

    def to_dict(self):
        return {
            "target": self.target,
            "true_class": self.true_class,
            "budget": self.budget,
            "clean_margin": self.clean_margin,
            "final_margin": self.final_margin,
            "chosen": [[f.i, f.j, f.delta_w] for f in self.chosen],
        }


def target_candidates(g: Graph, t) -> CandidateSet:
    """All pairs (v, t), v != t, minus removals that would isolate v."""
    g = check_graph(g)
    others = np.delete(np.arange(g.n), t)
    pairs = np.column_stack([np.minimum(others, t), np.maximum(others, t)])
    cand = CandidateSet.from_pairs(g, pairs, {"kind": "target", "target": int(t)})
    isolates = (cand.delta_w == -1) & (g.degrees[others] == 1)
    return cand.subset(~isolates)


def train_ensemble(Z, labels, size=10, seed=0, train_fraction=0.1, exclude=None, l2=1e-2):
    """Logistic regressions differing in split seed and initialisation seed."""
    members = []
    for k in range(size):
        train, _ = stratified_split(labels, train_fraction, seed + k, exclude)
        clf = LogisticRegressionGD(l2=l2, random_state=seed + k).fit(Z[train], labels[train])
        members.append(clf)
    return members


def ensemble_margins(ensemble, rows, true_class, classes=None) -> np.ndarray:
    """Mean margin over ensemble members for every row of ``rows``."""
    rows = np.atleast_2d(rows)
    out = np.zeros(len(rows))
    for clf in ensemble:
        col = int(np.searchsorted(clf.classes_, true_class))
        out += margins_from_probs(clf.predict_proba(rows), col)
    return out / len(ensemble)


@dataclass
class SurrogateModel:
    """Clean spectrum, the K surrogate columns and their pseudo-inverse cache."""

    graph: Graph
    spectrum: GeneralizedSpectrum
    columns: np.ndarray
    cache: PinvCache
    window: int

    @classmethod
    def fit(cls, g, K, window=5, max_bytes=2 * 1024**3):
        g = check_graph(g)
        spec = generalized_eigs(g)
        cols = surrogate_columns(spec, window, K)
        cache = build_pinv_cache(g, spec, cols, max_bytes=max_bytes)
        return cls(g, spec, cols, cache, window)

    @property
    def embedding(self):
        return surrogate_embedding(self.spectrum, self.window, len(self.columns)).Z

    def _flip_terms(self, pairs, delta_w):
        cols = self.columns
        V = self.spectrum.vectors[:, cols]
        lam = self.spectrum.lambdas[cols]
        ui, uj = V[pairs[:, 0]], V[pairs[:, 1]]
        d_lam = delta_w[:, None] * (2.0 * ui * uj - lam[None, :] * (ui**2 + uj**2))
        # coefficients of E_i and E_j in the correction vector
        ci = uj - lam[None, :] * ui
        cj = ui - lam[None, :] * uj
        weights = sum_of_powers(lam[None, :] + d_lam, self.window)
        return d_lam, ci, cj, weights

    def target_rows(self, t, pairs, delta_w) -> np.ndarray:
        """Estimated surrogate embedding row of node ``t`` after each single flip."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        delta_w = np.asarray(delta_w, dtype=np.float64).reshape(-1)
        cols = self.columns
        prow = self.cache.row_for_all(t, cols)  # [K, n]
        p_ud = np.array([self.cache.pinv_u_dot_d[int(y)][t] for y in cols])
        d_lam, ci, cj, weights = self._flip_terms(pairs, delta_w)
        corr = -d_lam * p_ud[None, :] + ci * prow[:, pairs[:, 0]].T + cj * prow[:, pairs[:, 1]].T
        u_t = self.spectrum.vectors[t, cols][None, :] - delta_w[:, None] * corr
        return u_t * weights

    def pair_scores(self, pairs, delta_w, target_pairs, max_bytes=2 * 1024**3, chunk_size=256):
        """Similarities ``z_a . z_b`` of every target pair after each candidate flip.

        Returns an array of shape [len(pairs), len(target_pairs)].
        """
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        delta_w = np.asarray(delta_w, dtype=np.float64).reshape(-1)
        target_pairs = np.asarray(target_pairs, dtype=np.int64).reshape(-1, 2)
        nodes, inv = np.unique(target_pairs, return_inverse=True)
        inv = inv.reshape(-1, 2)
        n = self.graph.n
        required = 8 * (len(pairs) * len(target_pairs) + len(nodes) * n + chunk_size * len(nodes) * 2)
        if max_bytes is not None and required > max_bytes:
            raise ResourceError("link scoring exceeds the memory budget", required)
        d_lam, ci, cj, weights = self._flip_terms(pairs, delta_w)
        out = np.zeros((len(pairs), len(target_pairs)))
        for k, y in enumerate(self.columns.tolist()):
            prow = self.cache.rows(y, nodes)  # [|nodes|, n]
            u_nodes = self.spectrum.vectors[nodes, y]
            p_ud = self.cache.pinv_u_dot_d[y][nodes]
            w2 = weights[:, k] ** 2
            for s in range(0, len(pairs), chunk_size):
                sl = slice(s, s + chunk_size)
                corr = (
                    -d_lam[sl, k:k + 1] * p_ud[None, :]
                    + ci[sl, k:k + 1] * prow[:, pairs[sl, 0]].T
                    + cj[sl, k:k + 1] * prow[:, pairs[sl, 1]].T
                )
                u_new = u_nodes[None, :] - delta_w[sl, None] * corr
                out[sl] += u_new[:, inv[:, 0]] * u_new[:, inv[:, 1]] * w2[sl, None]
        return out


def _greedy_feasible(g: Graph, pairs, delta_w, order, budget):
    """Walk the ranking and keep flips that leave every node with an edge."""
    deg = g.degrees.astype(np.int64).copy()
    chosen = []
    for idx in order:
        if len(chosen) == budget:
            break
        i, j = pairs[idx]
        dw = int(delta_w[idx])
        if dw < 0 and (deg[i] <= 1 or deg[j] <= 1):
            continue
        deg[i] += dw
        deg[j] += dw
        chosen.append(int(idx))
    return chosen


def svd_target_margin(g, t, labels, K=64, window=5, negatives=5, ensemble_size=10, seed=0,
                      train_fraction=0.1) -> float:
    """Margin of ``t`` under DeepWalk SVD embeddings retrained on ``g``."""
    Z = DeepWalkSVD(K, window, negatives).fit(g).embedding_
    ensemble = train_ensemble(Z, labels, ensemble_size, seed, train_fraction, exclude=[t])
    return float(ensemble_margins(ensemble, Z[t], labels[t])[0])


def targeted_class_attack(g, t, labels, K=64, window=5, negatives=5, ensemble_size=10, seed=0,
                          budget=None, surrogate=None, train_fraction=0.1, evaluate=True) -> MarginReport:
    """Choose ``d_t + 3`` flips incident to ``t`` that minimise its margin.

    Candidates are scored once on the clean surrogate model; the final margin is
    measured on DeepWalk SVD embeddings retrained on the poisoned graph.
    """
    g = check_graph(g)
    labels = check_labels(labels, g.n)
    t = int(t)
    if not 0 <= t < g.n:
        raise ValidationError(f"target {t} out of range")
    budget = int(g.degrees[t]) + 3 if budget is None else check_positive_int(budget, "budget", allow_zero=True)
    cand = target_candidates(g, t)
    if budget > len(cand):
        raise CapacityError(f"budget {budget} exceeds {len(cand)} candidates")
    model = surrogate if surrogate is not None else SurrogateModel.fit(g, K, window)
    ensemble = train_ensemble(model.embedding, labels, ensemble_size, seed, train_fraction, exclude=[t])
    rows = model.target_rows(t, cand.pairs, cand.delta_w)
    margins = ensemble_margins(ensemble, rows, labels[t])
    order = rank_by_score(cand.pairs, margins, descending=False)
    picked = _greedy_feasible(g, cand.pairs, cand.delta_w, order, budget)
    chosen = [EdgeFlip(int(cand.pairs[k, 0]), int(cand.pairs[k, 1]), int(cand.delta_w[k])) for k in picked]
    report = MarginReport(t, int(labels[t]), budget, cand.pairs, cand.delta_w, margins, chosen)
    if evaluate:
        args = (labels, K, window, negatives, ensemble_size, seed, train_fraction)
        report.clean_margin = svd_target_margin(g, t, *args)
        report.final_margin = svd_target_margin(apply_flips(g, chosen), t, *args) if chosen else report.clean_margin
    return report


def random_target_flips(g, t, budget=None, seed=0) -> list:
    """Random baseline: ``budget`` feasible flips drawn uniformly from the pairs at ``t``."""
    g = check_graph(g)
    budget = int(g.degrees[t]) + 3 if budget is None else budget
    cand = target_candidates(g, t)
    order = np.random.default_rng(seed).permutation(len(cand))
    picked = _greedy_feasible(g, cand.pairs, cand.delta_w, order, budget)
    return [EdgeFlip(int(cand.pairs[k, 0]), int(cand.pairs[k, 1]), int(cand.delta_w[k])) for k in picked]


@dataclass
class LinkTargets:
    train_graph: Graph
    pairs: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def to_json(self, path=None, budget=None):
        payload = {"mode": "link", "pairs": [[int(i), int(j), int(l)] for (i, j), l in zip(self.pairs, self.labels)]}
        if budget is not None:
            payload["budget"] = int(budget)
        text = json.dumps(payload)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def sample_link_targets(g, edge_fraction=0.1, negative_ratio=3, seed=0) -> LinkTargets:
    """Hold out a fraction of edges (never a node's protected edge) plus sampled non-edges."""
    g = check_graph(g)
    removable = removal_candidates(g, seed)
    n_pos = int(round(edge_fraction * g.num_edges))
    if n_pos > len(removable):
        raise CapacityError(f"cannot hold out {n_pos} edges, only {len(removable)} removable")
    rng = np.random.default_rng(seed)
    pos = removable.pairs[np.sort(rng.choice(len(removable), n_pos, replace=False))]
    neg = sample_add_candidates(g, negative_ratio * n_pos, seed + 1).pairs
    pairs = np.vstack([pos, neg])
    labels = np.concatenate([np.ones(len(pos), np.int64), np.zeros(len(neg), np.int64)])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    train = apply_flips(g, [EdgeFlip(int(i), int(j), -1) for i, j in pos])
    meta = {"edge_fraction": edge_fraction, "negative_ratio": negative_ratio, "seed": int(seed)}
    return LinkTargets(train, pairs[order], labels[order], meta)


def link_prediction_ap(g, pairs, labels, K=64, window=5, negatives=5) -> float:
    """AP of ``z_i . z_j`` scores from DeepWalk SVD embeddings of ``g``."""
    Z = DeepWalkSVD(K, window, negatives).fit(g).embedding_
    pairs = np.asarray(pairs, dtype=np.int64)
    return average_precision(np.sum(Z[pairs[:, 0]] * Z[pairs[:, 1]], axis=1), labels)


def link_candidates(g, target_pairs, n_add=None, seed=0) -> CandidateSet:
    """Removal candidates plus sampled additions, with every target pair excluded."""
    g = check_graph(g)
    target_pairs = np.asarray(target_pairs, dtype=np.int64).reshape(-1, 2)
    tkeys = np.minimum(target_pairs[:, 0], target_pairs[:, 1]) * g.n + np.maximum(target_pairs[:, 0], target_pairs[:, 1])
    rem = removal_candidates(g, seed)
    n_add = len(rem) if n_add is None else n_add
    add = sample_add_candidates(g, n_add + len(target_pairs), seed)
    pairs = np.vstack([rem.pairs, add.pairs])
    dw = np.concatenate([rem.delta_w, add.delta_w])
    keep = ~np.isin(pairs[:, 0] * g.n + pairs[:, 1], tkeys)
    pairs, dw = pairs[keep], dw[keep]
    n_rem = int(np.sum(dw == -1))
    sel = np.concatenate([np.flatnonzero(dw == -1), np.flatnonzero(dw == 1)[:n_add]])
    return CandidateSet(pairs[sel], dw[sel], {"kind": "link", "seed": int(seed), "removals": n_rem, "additions": int(min(n_add, np.sum(dw == 1)))})


def targeted_link_attack(g, target_pairs, target_labels, f, candidates: CandidateSet, K=64, window=5,
                         surrogate=None, max_bytes=2 * 1024**3) -> AttackPlan:
    """Pick the ``f`` flips whose estimated target-set AP is lowest.

    ``g`` is the training graph (target edges already removed); flipping a target
    pair directly is not allowed.
    """
    g = check_graph(g)
    f = check_positive_int(f, "f", allow_zero=True)
    target_pairs = np.asarray(target_pairs, dtype=np.int64).reshape(-1, 2)
    target_labels = np.asarray(target_labels)
    tkeys = np.minimum(target_pairs[:, 0], target_pairs[:, 1]) * g.n + np.maximum(target_pairs[:, 0], target_pairs[:, 1])
    ckeys = candidates.pairs[:, 0] * g.n + candidates.pairs[:, 1]
    if np.any(np.isin(ckeys, tkeys)):
        raise ValidationError("candidate set overlaps the target pairs")
    if len(candidates) < f:
        raise CapacityError(f"need {f} candidates, have {len(candidates)}")
    model = surrogate if surrogate is not None else SurrogateModel.fit(g, K, window)
    Zs = model.embedding
    clean_ap = average_precision(np.sum(Zs[target_pairs[:, 0]] * Zs[target_pairs[:, 1]], axis=1), target_labels)
    config = {"K": K, "T": window, "clean_surrogate_ap": clean_ap, "candidates": dict(candidates.provenance)}
    if f == 0 or len(candidates) == 0:
        return AttackPlan("link", candidates.pairs[:0], candidates.delta_w[:0], np.zeros(0), 0, config)
    scores = model.pair_scores(candidates.pairs, candidates.delta_w, target_pairs, max_bytes=max_bytes)
    ap = average_precision_batch(scores, target_labels)
    order = rank_by_score(candidates.pairs, ap, descending=False)
    picked = _greedy_feasible(g, candidates.pairs, candidates.delta_w, order, len(order))
    rest = np.setdiff1d(order, picked, assume_unique=True)
    order = np.concatenate([np.asarray(picked, dtype=np.int64), rest[np.argsort(np.searchsorted(order, rest))]])
    if len(picked) < f:
        raise CapacityError(f"only {len(picked)} flips keep every node connected, need {f}")
    return AttackPlan("link", candidates.pairs[order], candidates.delta_w[order], ap[order], f, config)


def random_link_flips(candidates: CandidateSet, f, seed=0, g=None) -> list:
    """Baseline: uniformly random feasible flips from the same candidate pool."""
    order = np.random.default_rng(seed).permutation(len(candidates))
    if g is not None:
        order = _greedy_feasible(g, candidates.pairs, candidates.delta_w, order, f)
    else:
        order = order[:f]
    return [EdgeFlip(int(candidates.pairs[k, 0]), int(candidates.pairs[k, 1]), int(candidates.delta_w[k])) for k in order]


def load_target_spec(path) -> dict:
    """Read ``{mode: "class"|"link", target | pairs, budget}``."""
    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    mode = spec.get("mode")
    if mode not in ("class", "link"):
        raise ValidationError(f"{path}: mode must be 'class' or 'link'")
    if mode == "class" and "target" not in spec:
        raise ValidationError(f"{path}: class mode needs 'target'")
    if mode == "link":
        pairs = np.asarray(spec.get("pairs", []), dtype=np.int64).reshape(-1, 3)
        if not len(pairs):
            raise ValidationError(f"{path}: link mode needs non-empty 'pairs'")
        spec["pairs"] = pairs
    return spec
