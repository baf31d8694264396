"""How good are the first-order eigenvalue updates and the singular-value bound."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..embedding import build_cooc, singular_values
from ..graph import CandidateSet, Graph, apply_flips, removal_candidates, sample_add_candidates
from ..spectrum import GeneralizedSpectrum, eigenvalue_deltas, generalized_eigs, generalized_eigvals, sum_of_powers
from ..validation import check_graph


def sample_flips(g: Graph, count, seed=0) -> CandidateSet:
    """Half additions, half feasible removals (fewer removals if scarce)."""
    rem = removal_candidates(g, seed)
    n_rem = min(count // 2, len(rem))
    add = sample_add_candidates(g, count - n_rem, seed)
    pick = np.sort(np.random.default_rng(seed).choice(len(rem), n_rem, replace=False))
    pairs = np.vstack([rem.pairs[pick], add.pairs])
    dw = np.concatenate([rem.delta_w[pick], add.delta_w])
    return CandidateSet(pairs, dw, {"kind": "mixed", "seed": int(seed)})


def bound_table(g: Graph, window=5, spectrum=None) -> np.ndarray:
    """Columns (p, sigma_p(S), |sum_r lambda_pi(p)^r| / d_min), p = 1..n."""
    g = check_graph(g)
    S = build_cooc(g, window, 1).S
    sigma = singular_values(0.5 * (S + S.T))
    lam = spectrum.lambdas if spectrum is not None else generalized_eigvals(g)
    bound = np.sort(np.abs(sum_of_powers(lam, window)))[::-1] / g.min_degree
    return np.column_stack([np.arange(1, g.n + 1), sigma, bound])


@dataclass
class ApproxReport:
    rows: np.ndarray
    bounds: np.ndarray
    window: int
    summary: dict = field(default_factory=dict)

    COLUMNS = ("i", "j", "delta_w", "mean_abs_gap", "max_abs_gap", "mean_abs_lambda",
               "mean_abs_power_gap", "mean_abs_power")

    def to_csv(self, path, bounds_path=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows:
                writer.writerow([int(row[0]), int(row[1]), int(row[2])] + [repr(float(x)) for x in row[3:]])
        if bounds_path is not None:
            with open(bounds_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["p", "sigma_S", "bound", "holds"])
                for p, s, b in self.bounds:
                    writer.writerow([int(p), repr(float(s)), repr(float(b)), int(s <= b + 1e-9 * max(b, 1.0))])


def approx_quality_report(g, spec: GeneralizedSpectrum | None = None, sample_size=500, seed=0, window=5,
                          flips: CandidateSet | None = None) -> ApproxReport:
    """Compare first-order eigenvalues against full re-decompositions.

    Both the exact and the estimated spectra are sorted descending before
    taking gaps, so gaps compare eigenvalues of equal rank.
    """
    g = check_graph(g)
    spec = spec if spec is not None else generalized_eigs(g)
    flips = flips if flips is not None else sample_flips(g, sample_size, seed)
    deltas = eigenvalue_deltas(spec, flips.pairs, flips.delta_w)
    rows = np.zeros((len(flips), 8))
    for k, fl in enumerate(flips):
        exact = generalized_eigvals(apply_flips(g, [fl]))
        approx = np.sort(spec.lambdas + deltas[k])[::-1]
        gap = np.abs(exact - approx)
        pe, pa = sum_of_powers(exact, window), sum_of_powers(approx, window)
        rows[k] = [fl.i, fl.j, fl.delta_w, gap.mean(), gap.max(), np.abs(exact).mean(),
                   np.abs(pe - pa).mean(), np.abs(pe).mean()]
    summary = {"n_flips": len(flips)}
    if len(flips):
        summary.update({
            "eig_ratio": float(rows[:, 3].mean() / rows[:, 5].mean()),
            "power_ratio": float(rows[:, 6].mean() / rows[:, 7].mean()),
            "max_abs_gap": float(rows[:, 4].max()),
        })
    bounds = bound_table(g, window, spec)
    summary["bound_holds"] = bool(np.all(bounds[:, 1] <= bounds[:, 2] + 1e-9 * np.maximum(bounds[:, 2], 1.0)))
    return ApproxReport(rows, bounds, window, summary)
