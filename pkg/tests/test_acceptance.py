"""Acceptance criteria. Each test prints one ``criterion N: PASS|FAIL`` line.

Real-data criteria read ``cora``, ``citeseer`` and ``polblogs`` from
``$GRAPHPOISON_DATA`` (``<name>.npz`` or ``<name>.edges`` + ``<name>.labels``)
and fail when the fixture is missing. Run directly with
``python tests/test_acceptance.py`` to print the summary without pytest.
"""

import itertools
import os
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from graphpoison.attacks.general import dw3_scores, loss_dw1, loss_dw2_for_flip, mhat_eigs
from graphpoison.attacks.targeted import (
    SurrogateModel,
    link_candidates,
    link_prediction_ap,
    random_link_flips,
    random_target_flips,
    sample_link_targets,
    svd_target_margin,
    targeted_class_attack,
    targeted_link_attack,
)
from graphpoison.datasets import DatasetNotFound, load_dataset, random_connected_graph, sbm_graph
from graphpoison.embedding import build_cooc, reconstruct_S_from_spectrum
from graphpoison.evaluation.diagnostics import approx_quality_report, bound_table, sample_flips
from graphpoison.evaluation.experiment import ExperimentConfig, run_experiment
from graphpoison.evaluation.metrics import pearson_r
from graphpoison.exceptions import CapacityError
from graphpoison.graph import CandidateSet, Graph, apply_flips
from graphpoison.spectrum import (
    approx_eigenvalues_after_flip,
    approx_laplacian_eigs_after_flip,
    generalized_eigs,
    laplacian_eigs,
)


class Unavailable(Exception):
    pass


def dataset(name):
    try:
        return load_dataset(name)
    except DatasetNotFound as exc:
        raise Unavailable(f"fixture not available: {name} ({exc})") from exc


def line(num, ok, detail):
    return f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}"


def run(num, fn):
    try:
        ok, detail = fn()
    except Unavailable as exc:
        ok, detail = False, str(exc)
    return ok, line(num, ok, detail)


def flip_delta_mats(n, flip):
    dA = sp.csr_matrix(([flip.delta_w] * 2, ([flip.i, flip.j], [flip.j, flip.i])), shape=(n, n))
    dD = sp.diags(np.asarray(dA.sum(axis=1)).ravel())
    return dA, dD


def criterion_1(n_graphs=50, n_flips=20):
    start = time.perf_counter()
    worst = {"adjacency": 0.0, "rw": 0.0, "unnormalized": 0.0}
    rng = np.random.default_rng(1)
    s = done = 0
    while done < n_graphs:
        s += 1
        g = random_connected_graph(int(rng.integers(5, 51)), float(rng.uniform(0.1, 0.5)), s)
        try:
            flips = sample_flips(g, n_flips, s)
        except CapacityError:
            continue  # too small or too dense for 20 distinct flips
        done += 1
        spec, rw, un = generalized_eigs(g), laplacian_eigs(g, "rw"), laplacian_eigs(g, "unnormalized")
        for flip in flips:
            dA, dD = flip_delta_mats(g.n, flip)
            dL = dD - dA
            U = spec.vectors
            exact = np.einsum("iy,iy->y", U, dA @ U - (dD @ U) * spec.lambdas[None, :])
            worst["adjacency"] = max(worst["adjacency"], np.abs(approx_eigenvalues_after_flip(spec, flip) - spec.lambdas - exact).max())
            U = rw.vectors
            exact = np.einsum("iy,iy->y", U, dL @ U - (dD @ U) * rw.lambdas[None, :])
            worst["rw"] = max(worst["rw"], np.abs(approx_laplacian_eigs_after_flip(rw, flip, "rw") - rw.lambdas - exact).max())
            U = un.vectors
            exact = np.einsum("iy,iy->y", U, dL @ U)
            worst["unnormalized"] = max(worst["unnormalized"], np.abs(
                approx_laplacian_eigs_after_flip(un, flip, "unnormalized") - un.lambdas - exact).max())
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-12 and elapsed < 60
    return ok, f"max abs error {', '.join(f'{k}={v:.1e}' for k, v in worst.items())}; {elapsed:.1f}s (limit 60s)"


def criterion_2(window=5):
    start = time.perf_counter()
    fixtures = {"triangle": Graph.from_edges([(0, 1), (1, 2), (0, 2)], 3)}
    for s in range(5):
        fixtures[f"random{s}"] = random_connected_graph(20 + 10 * s, 0.2, s)
    fixtures["sbm"] = sbm_graph([50, 50, 50], 0.1, 0.01, 0).graph
    errors = {}
    for name, g in fixtures.items():
        S = build_cooc(g, window, 1).S
        errors[name] = np.linalg.norm(S - reconstruct_S_from_spectrum(generalized_eigs(g), window)) / np.linalg.norm(S)
    worst = max(errors.values())
    try:
        g = dataset("cora").graph
    except Unavailable as exc:
        return False, f"synthetic fixtures max rel error {worst:.1e}; {exc}"
    S = build_cooc(g, window, 1).S
    errors["cora"] = np.linalg.norm(S - reconstruct_S_from_spectrum(generalized_eigs(g), window)) / np.linalg.norm(S)
    elapsed = time.perf_counter() - start
    worst = max(errors.values())
    return worst <= 1e-8 and elapsed < 120, f"max rel error {worst:.1e} (cora {errors['cora']:.1e}); {elapsed:.1f}s (limit 120s)"


def criterion_3(n_flips=5000, smoke_flips=500):
    g = dataset("cora").graph
    spec = generalized_eigs(g)
    start = time.perf_counter()
    smoke = approx_quality_report(g, spec, smoke_flips, seed=0).summary
    smoke_time = time.perf_counter() - start
    start = time.perf_counter()
    full = approx_quality_report(g, spec, n_flips, seed=0).summary
    full_time = time.perf_counter() - start
    ok = (full["eig_ratio"] <= 1e-2 and full["power_ratio"] <= 1e-2 and full_time < 1800
          and smoke["eig_ratio"] <= 1e-2 and smoke["power_ratio"] <= 1e-2 and smoke_time < 180)
    return ok, (f"{n_flips} flips: eig ratio {full['eig_ratio']:.1e}, power ratio {full['power_ratio']:.1e}, "
                f"{full_time:.0f}s; {smoke_flips}-flip smoke {smoke_time:.0f}s")


def criterion_4(n_flips=100, window=5):
    details = []
    ok = True
    for name in ("cora", "citeseer", "polblogs"):
        g = dataset(name).graph
        tab = bound_table(g, window)
        clean_ok = bool(np.all(tab[:, 1] <= tab[:, 2] + 1e-9 * np.maximum(tab[:, 2], 1)))
        flipped_ok = True
        for flip in sample_flips(g, n_flips, 0):
            g2 = apply_flips(g, [flip])
            t2 = bound_table(g2, window, None)
            flipped_ok &= bool(np.all(t2[:, 1] <= t2[:, 2] + 1e-9 * np.maximum(t2[:, 2], 1)))
        ok &= clean_ok and flipped_ok
        details.append(f"{name} clean={clean_ok} flipped={flipped_ok}")
    return ok, "; ".join(details)


def criterion_5(n_candidates=20000, K=32, window=5, negatives=5):
    g = dataset("cora").graph
    cand = sample_flips(g, n_candidates, 0)
    spec = generalized_eigs(g)
    dw3 = dw3_scores(spec, g, cand.pairs, cand.delta_w, K, window, negatives)
    eig = mhat_eigs(g, window, negatives)
    dw2 = np.array([loss_dw2_for_flip(g, eig, f, K, window, negatives) for f in cand])
    dw1 = np.array([loss_dw1(apply_flips(g, [f]), K, window, negatives) for f in cand])
    r3, r2 = pearson_r(dw3, dw1), pearson_r(dw2, dw1)
    return r3 >= 0.80 and r3 > r2, f"R(DW3, DW1)={r3:.3f} (need >= 0.80), R(DW2, DW1)={r2:.3f}"


def all_feasible_flips(g):
    pairs = np.array(list(itertools.combinations(range(g.n), 2)))
    cand = CandidateSet.from_pairs(g, pairs)
    d = g.degrees
    isolating = (cand.delta_w == -1) & ((d[cand.pairs[:, 0]] == 1) | (d[cand.pairs[:, 1]] == 1))
    return cand.subset(~isolating)


def criterion_6(n_graphs=20, K=2, window=3, negatives=1, p=0.4):
    hits = []
    for s in range(n_graphs):
        g = random_connected_graph(8 + s % 5, p, 1000 + s)
        cand = all_feasible_flips(g)
        approx = dw3_scores(generalized_eigs(g), g, cand.pairs, cand.delta_w, K, window, negatives)
        exact = np.array([loss_dw1(apply_flips(g, [f]), K, window, negatives) for f in cand])
        rank = int(np.sum(exact > exact[np.argmax(approx)]))
        hits.append(rank < max(1, int(np.ceil(0.1 * len(cand)))))
    rate = float(np.mean(hits))
    return rate >= 0.8, f"DW3 top flip in exact top 10% on {sum(hits)}/{n_graphs} graphs ({rate:.0%}, need >= 80%)"


def _damage(g, labels, strategy, flips, seed, restricted=0.0, K_attack=32):
    cfg = ExperimentConfig(data="<memory>", strategy=strategy, flips=flips, restricted=restricted, seed=seed,
                           K_attack=K_attack)
    rec = run_experiment(cfg, graph=g, labels=labels)
    return rec.damage


def criterion_7(seeds=5):
    cora = dataset("cora")
    polblogs = dataset("polblogs")
    drops = {s: np.mean([_damage(cora.graph, cora.labels, s, -500, k) for k in range(seeds)])
             for s in ("dw3", "rnd", "deg")}
    f_add = int(round(0.06 * polblogs.graph.num_edges))
    abr = _damage(polblogs.graph, polblogs.labels, "abr", f_add, 0)
    ok = drops["dw3"] >= drops["rnd"] and drops["dw3"] >= drops["deg"] and abr >= 0.15
    return ok, (f"cora remove 500 drop dw3={drops['dw3']:.3f} rnd={drops['rnd']:.3f} deg={drops['deg']:.3f}; "
                f"polblogs add {f_add} abr drop={abr:.3f} (need >= 0.15)")


def criterion_8(fractions=(0.1, 0.25, 0.5)):
    cora = dataset("cora")
    dmg = [_damage(cora.graph, cora.labels, "dw3", -500, 0, restricted=p) for p in fractions]
    ok = all(a >= b for a, b in zip(dmg, dmg[1:])) and dmg[-1] > 0
    return ok, "damage " + ", ".join(f"p_r={p}: {d:.3f}" for p, d in zip(fractions, dmg))


def criterion_9(n_targets=100, K=64):
    cora = dataset("cora")
    g, labels = cora.graph, cora.labels
    start = time.perf_counter()
    model = SurrogateModel.fit(g, K)
    targets = np.random.default_rng(0).choice(g.n, n_targets, replace=False)
    ours = rnd = 0
    for t in targets:
        rep = targeted_class_attack(g, int(t), labels, K=K, surrogate=model)
        ours += rep.misclassified
        flips = random_target_flips(g, int(t), rep.budget, seed=int(t))
        rnd += svd_target_margin(apply_flips(g, flips), int(t), labels, K) < 0
    elapsed = time.perf_counter() - start
    ok = ours >= 2 * rnd and elapsed < 3600
    return ok, f"misclassified {ours}/{n_targets} vs random {rnd}/{n_targets}; {elapsed / 60:.1f} min (limit 60)"


def criterion_10(K=64):
    g = dataset("cora").graph
    lt = sample_link_targets(g, 0.1, 3, 0)
    f = int(round(0.125 * g.num_edges))
    cand = link_candidates(lt.train_graph, lt.pairs, seed=0)
    plan = targeted_link_attack(lt.train_graph, lt.pairs, lt.labels, f, cand, K=K)
    clean = link_prediction_ap(lt.train_graph, lt.pairs, lt.labels, K)
    ours = link_prediction_ap(plan.apply(lt.train_graph), lt.pairs, lt.labels, K)
    rnd_graph = apply_flips(lt.train_graph, random_link_flips(cand, f, 0, lt.train_graph))
    rnd = link_prediction_ap(rnd_graph, lt.pairs, lt.labels, K)
    ok = clean - ours >= clean - rnd and clean - ours >= 0.05
    return ok, f"AP clean={clean:.3f} attacked={ours:.3f} random={rnd:.3f} (need drop >= 0.05)"


def criterion_11(n_candidates=20000, K=32, workers=4):
    g = dataset("cora").graph
    cand = sample_flips(g, n_candidates, 0)
    spec = generalized_eigs(g)
    start = time.perf_counter()
    serial = dw3_scores(spec, g, cand.pairs, cand.delta_w, K, n_jobs=1)
    t1 = time.perf_counter() - start
    start = time.perf_counter()
    parallel = dw3_scores(spec, g, cand.pairs, cand.delta_w, K, n_jobs=workers)
    t4 = time.perf_counter() - start
    speedup = t1 / t4
    ok = t1 < 300 and speedup >= 3 and np.array_equal(serial, parallel)
    return ok, f"serial {t1:.1f}s (limit 300s), {workers} workers {t4:.1f}s, speedup {speedup:.2f}x (need >= 3x) on {os.cpu_count()} cpu(s)"


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 12)}


@pytest.mark.parametrize("num", list(CRITERIA))
def test_acceptance(num, capsys):
    ok, text = run(num, CRITERIA[num])
    with capsys.disabled():
        print("\n" + text)
    assert ok, text


if __name__ == "__main__":
    results = [run(k, fn) for k, fn in CRITERIA.items()]
    for _, text in results:
        print(text)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
