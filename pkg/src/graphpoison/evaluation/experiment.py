"""Experiment orchestration: attack, retrain, evaluate and persist."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..attacks.general import STRATEGIES, AttackPlan, plan_attack
from ..attacks.targeted import link_prediction_ap, sample_link_targets
from ..embedding import DeepWalkSVD
from ..exceptions import GraphPoisonError, ValidationError
from ..graph import Graph, apply_flips, load_edge_list, load_labels
from .classification import evaluate_node_classification


@contextmanager
def stage(name, timings=None):
    """Time a pipeline stage and prefix any library error with its name."""
    start = time.perf_counter()
    try:
        yield
    except GraphPoisonError as exc:
        exc.stage = name
        if exc.args and not str(exc.args[0]).startswith(f"[{name}]"):
            exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise
    finally:
        if timings is not None:
            timings[name] = time.perf_counter() - start


@dataclass
class ExperimentConfig:
    """One attack-and-evaluate run.

    ``flips`` is signed: negative removes edges, positive adds them.
    """

    data: str
    labels: str | None = None
    strategy: str = "dw3"
    flips: int = -500
    candidates: int = 20000
    restricted: float = 0.0
    seed: int = 0
    eval_seeds: int = 10
    train_fraction: float = 0.1
    task: str = "class"
    K_attack: int = 32
    K_embed: int = 64
    window: int = 5
    negatives: int = 5
    abr_multiplier: int = 4
    laplacian: str = "rw"
    n_jobs: int = 1
    out: str | None = None

    def validate(self):
        if not Path(self.data).exists():
            raise ValidationError(f"data file {self.data} does not exist")
        if self.task == "class" and (self.labels is None or not Path(self.labels).exists()):
            raise ValidationError("node classification needs an existing label file")
        if self.flips == 0:
            raise ValidationError("flip budget must be non-zero")
        if not 0 <= self.restricted < 1:
            raise ValidationError(f"restricted fraction must lie in [0, 1), got {self.restricted}")
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.strategy!r}")
        if self.task not in ("class", "link"):
            raise ValidationError(f"task must be 'class' or 'link', got {self.task!r}")
        return self

    def to_dict(self):
        return asdict(self)

    def fingerprint(self) -> str:
        keys = {k: v for k, v in self.to_dict().items() if k not in ("out", "n_jobs")}
        return hashlib.sha256(json.dumps(keys, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ResultRecord:
    fingerprint: str
    config: dict
    graph_fingerprint: str
    task: str
    clean_metric: float
    poisoned_metric: float
    details: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    flips: list = field(default_factory=list)

    @property
    def damage(self) -> float:
        return self.clean_metric - self.poisoned_metric

    def to_dict(self):
        return asdict(self)


def _load_graph_and_labels(cfg: ExperimentConfig):
    g = load_edge_list(cfg.data)
    labels = load_labels(cfg.labels, g.n) if cfg.labels else None
    return g, labels


def classification_scores(g, labels, K=64, window=5, negatives=5, train_fraction=0.1, n_seeds=10, seed=0):
    """Retrain DeepWalk SVD on ``g`` and report mean micro/macro F1."""
    Z = DeepWalkSVD(K, window, negatives).fit(g).embedding_
    return evaluate_node_classification(Z, labels, train_fraction, n_seeds, seed)


def evaluate_plan_on_link(g: Graph, plan: AttackPlan, K=64, window=5, negatives=5, seed=0):
    """Link AP before and after ``plan`` on a held-out target set.

    Targets are sampled from ``g``; flips touching a target pair or breaking
    feasibility on the training graph are skipped and counted.
    """
    targets = sample_link_targets(g, 0.1, 3, seed)
    tkeys = set(map(tuple, targets.pairs.tolist()))
    deg = targets.train_graph.degrees.astype(np.int64).copy()
    kept, skipped = [], 0
    for fl in plan.chosen:
        if (fl.i, fl.j) in tkeys:
            skipped += 1
            continue
        if fl.delta_w < 0 and (deg[fl.i] <= 1 or deg[fl.j] <= 1 or not targets.train_graph.has_edge(fl.i, fl.j)):
            skipped += 1
            continue
        deg[fl.i] += fl.delta_w
        deg[fl.j] += fl.delta_w
        kept.append(fl)
    poisoned = apply_flips(targets.train_graph, kept)
    clean = link_prediction_ap(targets.train_graph, targets.pairs, targets.labels, K, window, negatives)
    after = link_prediction_ap(poisoned, targets.pairs, targets.labels, K, window, negatives)
    return clean, after, {"applied": len(kept), "skipped": skipped, "n_targets": len(targets.pairs)}


def run_experiment(cfg: ExperimentConfig, graph=None, labels=None) -> ResultRecord:
    """Load, plan, poison, retrain and evaluate; persist to ``cfg.out`` if set.

    ``graph``/``labels`` may be passed in memory instead of reading ``cfg.data``.
    """
    timings = {}
    if graph is None:
        with stage("config", timings):
            cfg.validate()
        with stage("load", timings):
            graph, labels = _load_graph_and_labels(cfg)
    elif cfg.flips == 0:
        raise ValidationError("flip budget must be non-zero")
    with stage("attack", timings):
        plan = plan_attack(
            graph, cfg.strategy, cfg.flips, cfg.candidates, cfg.restricted, cfg.seed,
            cfg.K_attack, cfg.window, cfg.negatives, cfg.abr_multiplier, cfg.laplacian, cfg.n_jobs,
        )
    details = {"n_candidates": len(plan.pairs)}
    with stage("evaluate", timings):
        if cfg.task == "class":
            common = (cfg.K_embed, cfg.window, cfg.negatives, cfg.train_fraction, cfg.eval_seeds, cfg.seed)
            clean = classification_scores(graph, labels, *common)
            poisoned = classification_scores(plan.apply(graph), labels, *common)
            details.update({"clean_macro_f1": clean["macro_f1"], "poisoned_macro_f1": poisoned["macro_f1"]})
            clean_metric, poisoned_metric = clean["micro_f1"], poisoned["micro_f1"]
        else:
            clean_metric, poisoned_metric, extra = evaluate_plan_on_link(
                graph, plan, cfg.K_embed, cfg.window, cfg.negatives, cfg.seed)
            details.update(extra)
    record = ResultRecord(
        fingerprint=cfg.fingerprint(),
        config=cfg.to_dict(),
        graph_fingerprint=graph.fingerprint(),
        task=cfg.task,
        clean_metric=float(clean_metric),
        poisoned_metric=float(poisoned_metric),
        details=details,
        timings=timings,
        flips=[[f.i, f.j, f.delta_w, float(s)] for f, s in zip(plan.chosen, plan.scores[: plan.n_flips])],
    )
    if cfg.out:
        with stage("persist", timings):
            persist(record, plan, cfg.out)
    return record


def persist(record: ResultRecord, plan: AttackPlan | None, out):
    """Write ``record.json``, ``plan.json`` and ``scores.csv`` under ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "record.json", "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, indent=1, sort_keys=True)
    if plan is not None:
        plan.to_json(out / "plan.json")
        with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rank", "i", "j", "delta_w", "score", "chosen"])
            for r, ((i, j), dw, s) in enumerate(zip(plan.pairs, plan.delta_w, plan.scores)):
                writer.writerow([r, int(i), int(j), int(dw), repr(float(s)), int(r < plan.n_flips)])


def margin_table(reports, degrees, path=None):
    """Rows (target, degree, log2-degree bin, clean, final, misclassified)."""
    rows = []
    for rep in reports:
        d = int(degrees[rep.target])
        rows.append([rep.target, d, int(np.floor(np.log2(d))), rep.clean_margin, rep.final_margin,
                     int(rep.misclassified)])
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["target", "degree", "log2_degree_bin", "clean_margin", "final_margin", "misclassified"])
            writer.writerows(rows)
    return rows
