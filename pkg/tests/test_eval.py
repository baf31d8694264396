import csv
import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import pearsonr
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score as sk_f1

from graphpoison.attacks.general import plan_attack
from graphpoison.attacks.targeted import MarginReport
from graphpoison.datasets import DatasetNotFound, load_dataset, load_npz, random_connected_graph, sbm_graph
from graphpoison.embedding import DeepWalkSVD, build_cooc
from graphpoison.evaluation.classification import (
    LogisticRegressionGD,
    evaluate_node_classification,
    stratified_split,
    train_logreg,
)
from graphpoison.evaluation.diagnostics import approx_quality_report, bound_table, sample_flips
from graphpoison.evaluation.experiment import (
    ExperimentConfig,
    margin_table,
    persist,
    run_experiment,
    stage,
)
from graphpoison.evaluation.metrics import f1_score, pearson_r
from graphpoison.exceptions import SplitError, UndefinedMetricError, ValidationError
from graphpoison.graph import save_edge_list
from graphpoison.spectrum import generalized_eigs, generalized_eigvals


class TestF1:
    def test_perfect_and_wrong(self):
        assert f1_score([0, 1, 2], [0, 1, 2]) == 1.0
        assert f1_score([1, 0, 1], [0, 1, 0]) == 0.0

    def test_confusion_fixture(self):
        truth, pred = [0, 0, 1, 1, 2, 2], [0, 1, 1, 1, 2, 0]
        assert f1_score(pred, truth, "micro") == pytest.approx(4 / 6)
        assert f1_score(pred, truth, "macro") == pytest.approx((0.5 + 0.8 + 2 / 3) / 3)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            f1_score([0, 1], [0])

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=40))
    def test_matches_sklearn(self, rows):
        pred, truth = map(np.array, zip(*rows))
        for avg in ("micro", "macro"):
            assert f1_score(pred, truth, avg) == pytest.approx(sk_f1(truth, pred, average=avg, zero_division=0))


class TestPearson:
    def test_examples(self):
        x = np.arange(10.0)
        assert pearson_r(x, x) == 1.0
        assert pearson_r(x, -x) == -1.0

    def test_zero_variance(self):
        with pytest.raises(UndefinedMetricError):
            pearson_r([1, 1, 1], [1, 2, 3])

    @settings(max_examples=50)
    @given(st.integers(3, 50), st.integers(0, 2**16))
    def test_matches_scipy(self, n, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        assert pearson_r(x, y) == pytest.approx(pearsonr(x, y)[0], abs=1e-12)


class TestLogReg:
    def test_separable_toy(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(-2, 0.5, (20, 2)), rng.normal(2, 0.5, (20, 2))])
        y = np.repeat([0, 1], 20)
        clf = LogisticRegressionGD().fit(X, y)
        assert np.mean(clf.predict(X) == y) == 1.0

    def test_identical_embeddings_give_prior(self):
        X = np.ones((10, 3))
        y = np.array([0] * 7 + [1] * 3)
        p = LogisticRegressionGD().fit(X, y).predict_proba(X[:1])[0]
        assert p == pytest.approx([0.7, 0.3], abs=1e-4)
        assert p[0] - p[1] == pytest.approx(0.4, abs=1e-4)

    def test_matches_lbfgs_reference(self):
        ds = sbm_graph([30, 30, 30], 0.3, 0.03, seed=0)
        Z = DeepWalkSVD(16, 5, 1).fit(ds.graph).embedding_
        train, test = stratified_split(ds.labels, 0.1, 0)
        ours = LogisticRegressionGD(l2=1e-2, random_state=0).fit(Z[train], ds.labels[train])
        assert ours.grad_norm_ <= 1e-5
        Xs = (Z - ours.mean_) / ours.scale_
        ref = LogisticRegression(C=1 / (1e-2 * len(train)), tol=1e-10, max_iter=10000).fit(Xs[train], ds.labels[train])
        assert np.allclose(ours.predict_proba(Z[test]), ref.predict_proba(Xs[test]), atol=1e-3)
        acc = np.mean(ours.predict(Z[test]) == ds.labels[test])
        assert abs(acc - np.mean(ref.predict(Xs[test]) == ds.labels[test])) <= 0.05

    def test_split(self):
        labels = np.array([0] * 20 + [1] * 10 + [2] * 3)
        train, test = stratified_split(labels, 0.1, 1, exclude=[0])
        assert 0 not in train and len(np.intersect1d(train, test)) == 0
        assert np.bincount(labels[train]).tolist() == [2, 1, 1]
        with pytest.raises(SplitError):
            stratified_split(labels, 0.1, 0, exclude=[30, 31, 32])
        with pytest.raises(ValidationError):
            stratified_split(labels, 1.0)

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            train_logreg(np.zeros((4, 2)), np.zeros(4, int))

    def test_evaluate_reports_both(self):
        ds = sbm_graph([20, 20], 0.4, 0.02, seed=1)
        Z = DeepWalkSVD(8, 5, 1).fit(ds.graph).embedding_
        res = evaluate_node_classification(Z, ds.labels, 0.1, 3)
        assert 0 <= res["macro_f1"] <= 1 and res["micro_f1"] > 0.6
        assert len(res["micro_f1_per_seed"]) == 3


class TestDiagnostics:
    def test_null_flip_gap_zero(self, small_graph):
        spec = generalized_eigs(small_graph)
        assert np.array_equal(generalized_eigvals(small_graph), np.sort(spec.lambdas)[::-1])
        rep = approx_quality_report(small_graph, spec, flips=sample_flips(small_graph, 0))
        assert rep.rows.shape == (0, 8) and rep.summary["bound_holds"]

    def test_report(self, tmp_path):
        g = random_connected_graph(40, 0.2, 0)
        rep = approx_quality_report(g, sample_size=30, seed=1)
        assert len(rep.rows) == 30
        assert rep.summary["eig_ratio"] < 0.1 and rep.summary["bound_holds"]
        rep.to_csv(tmp_path / "a.csv", tmp_path / "b.csv")
        rows = list(csv.DictReader(open(tmp_path / "b.csv")))
        assert len(rows) == 40 and all(r["holds"] == "1" for r in rows)

    def test_bound_table_sigma(self, small_graph):
        tab = bound_table(small_graph, 5)
        s = np.linalg.svd(build_cooc(small_graph, 5, 1).S, compute_uv=False)
        assert np.allclose(tab[:, 1], s, atol=1e-12)

    def test_sample_flips_mix(self, small_graph):
        fl = sample_flips(small_graph, 10, 3)
        assert len(fl) == 10 and np.sum(fl.delta_w == -1) == 5


class TestExperiment:
    @pytest.fixture
    def files(self, tmp_path):
        ds = sbm_graph([15, 15], 0.4, 0.05, seed=3)
        save_edge_list(ds.graph, tmp_path / "g.edges")
        (tmp_path / "g.labels").write_text("".join(f"{i} {c}\n" for i, c in enumerate(ds.labels)))
        return tmp_path / "g.edges", tmp_path / "g.labels"

    def cfg(self, files, **kw):
        base = dict(data=str(files[0]), labels=str(files[1]), strategy="dw3", flips=-5, candidates=50,
                    eval_seeds=2, train_fraction=0.2, K_attack=4, K_embed=8, negatives=1)
        base.update(kw)
        return ExperimentConfig(**base)

    def test_deterministic(self, files, tmp_path):
        a = run_experiment(self.cfg(files, out=str(tmp_path / "a")))
        b = run_experiment(self.cfg(files))
        assert a.fingerprint == b.fingerprint
        assert (a.clean_metric, a.poisoned_metric, a.flips) == (b.clean_metric, b.poisoned_metric, b.flips)
        assert 0 <= a.poisoned_metric <= 1 and all(v >= 0 for v in a.timings.values())
        rec = json.loads((tmp_path / "a" / "record.json").read_text())
        assert rec["fingerprint"] == a.fingerprint
        assert (tmp_path / "a" / "scores.csv").read_text().startswith("rank,i,j,delta_w,score,chosen")

    def test_fingerprint_sensitivity(self, files):
        assert self.cfg(files).fingerprint() != self.cfg(files, seed=1).fingerprint()
        assert self.cfg(files).fingerprint() == self.cfg(files, out="x", n_jobs=3).fingerprint()

    def test_zero_flips_rejected(self, files):
        with pytest.raises(ValidationError, match=r"\[config\]"):
            run_experiment(self.cfg(files, flips=0))

    def test_bad_config(self, files):
        for kw in ({"restricted": 1.0}, {"strategy": "nope"}, {"data": "missing.edges"}, {"task": "x"}):
            with pytest.raises(ValidationError):
                self.cfg(files, **kw).validate()

    def test_link_task(self, files):
        rec = run_experiment(self.cfg(files, task="link", labels=None, flips=-3))
        assert 0 <= rec.clean_metric <= 1 and rec.details["applied"] + rec.details["skipped"] == 3

    def test_stage_tag(self):
        timings = {}
        with pytest.raises(ValidationError) as info:
            with stage("attack", timings):
                raise ValidationError("boom")
        assert str(info.value).startswith("[attack]") and info.value.stage == "attack"
        assert timings["attack"] >= 0

    def test_persist_without_plan(self, files, tmp_path):
        rec = run_experiment(self.cfg(files))
        persist(rec, None, tmp_path / "p")
        assert (tmp_path / "p" / "record.json").exists() and not (tmp_path / "p" / "plan.json").exists()

    def test_margin_table(self, tmp_path):
        reps = [MarginReport(t, 0, 1, np.zeros((0, 2)), np.zeros(0), np.zeros(0), [], 0.5, m)
                for t, m in [(0, -0.2), (1, 0.3)]]
        rows = margin_table(reps, np.array([1, 5]), tmp_path / "m.csv")
        assert [r[2] for r in rows] == [0, 2] and [r[5] for r in rows] == [1, 0]


class TestDatasets:
    def test_npz_keeps_largest_component(self, tmp_path):
        A = sp.lil_matrix((6, 6))
        for i, j in [(0, 1), (1, 2), (2, 0), (3, 4)]:
            A[i, j] = A[j, i] = 1
        A = A.tocsr()
        np.savez(tmp_path / "toy.npz", adj_data=A.data, adj_indices=A.indices, adj_indptr=A.indptr,
                 adj_shape=A.shape, labels=np.arange(6))
        ds = load_npz(tmp_path / "toy.npz")
        assert ds.graph.n == 3 and ds.labels.tolist() == [0, 1, 2]
        assert load_dataset("toy", tmp_path).graph == ds.graph

    def test_missing(self, tmp_path):
        with pytest.raises(DatasetNotFound):
            load_dataset("cora", tmp_path)

    def test_sbm(self):
        ds = sbm_graph([10, 12], 0.5, 0.05, seed=0)
        assert ds.graph.n == len(ds.labels) and ds.graph.min_degree >= 1


def test_plan_attack_restricted_excluded(small_graph):
    plan = plan_attack(small_graph, "rnd", 3, n_candidates=10, restricted_fraction=0.2)
    assert len(plan.chosen) == 3
