"""Command line entry point ``graphpoison``.

Exit codes: 0 ok, 2 validation, 3 capacity, 4 solver. Spectra are cached under
``$GRAPHPOISON_CACHE_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .attacks.general import STRATEGIES, AttackPlan, plan_attack
from .attacks.targeted import (
    SurrogateModel,
    link_candidates,
    load_target_spec,
    random_target_flips,
    sample_link_targets,
    svd_target_margin,
    targeted_class_attack,
    targeted_link_attack,
)
from .evaluation.diagnostics import approx_quality_report
from .evaluation.experiment import (
    ExperimentConfig,
    ResultRecord,
    classification_scores,
    evaluate_plan_on_link,
    persist,
)
from .exceptions import GraphPoisonError, UsageError, ValidationError
from .graph import EdgeFlip, apply_flips, load_edge_list, load_labels
from .spectrum import generalized_eigs, load_spectrum, save_spectrum

log = logging.getLogger("graphpoison")


def cached_spectrum(g):
    """Generalized spectrum, reused from ``$GRAPHPOISON_CACHE_DIR`` if present."""
    root = os.environ.get("GRAPHPOISON_CACHE_DIR")
    if not root:
        return generalized_eigs(g)
    path = Path(root) / f"{g.fingerprint()}.spec"
    if path.exists():
        spec = load_spectrum(path)
        if spec.n == g.n:
            return spec
    spec = generalized_eigs(g)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_spectrum(spec, path)
    return spec


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_attack(args):
    g = load_edge_list(args.data)
    plan = plan_attack(
        g, args.strategy, args.flips, args.candidates, args.restricted, args.seed, args.K,
        args.window, args.negatives, args.abr_multiplier, args.laplacian, args.jobs,
    )
    plan.config.update({"data": str(args.data), "labels": args.labels})
    out = _out_dir(args.out)
    plan.to_json(out / "plan.json")
    print(json.dumps({"plan": str(out / "plan.json"), "n_flips": plan.n_flips, "candidates": len(plan.pairs)}))
    return 0


def cmd_evaluate(args):
    plan = AttackPlan.from_json(args.plan)
    data = args.data or plan.config.get("data")
    if not data:
        raise ValidationError("no graph given and the plan does not record one")
    g = load_edge_list(data)
    cfg = ExperimentConfig(data=data, labels=args.labels or plan.config.get("labels"), strategy=plan.strategy,
                           flips=plan.config.get("flips", plan.n_flips), seed=args.seed, task=args.task,
                           K_embed=args.K, eval_seeds=args.eval_seeds, out=args.out)
    if args.task == "class":
        if not cfg.labels:
            raise ValidationError("--labels is required for --task class")
        labels = load_labels(cfg.labels, g.n)
        common = (args.K, args.window, args.negatives, 0.1, args.eval_seeds, args.seed)
        clean = classification_scores(g, labels, *common)
        poisoned = classification_scores(plan.apply(g), labels, *common)
        clean_m, poisoned_m = clean["micro_f1"], poisoned["micro_f1"]
        details = {"clean_macro_f1": clean["macro_f1"], "poisoned_macro_f1": poisoned["macro_f1"]}
    else:
        clean_m, poisoned_m, details = evaluate_plan_on_link(g, plan, args.K, args.window, args.negatives, args.seed)
    record = ResultRecord(cfg.fingerprint(), cfg.to_dict(), g.fingerprint(), args.task, clean_m, poisoned_m, details)
    if args.out:
        persist(record, None, args.out)
    print(json.dumps({"task": args.task, "clean": clean_m, "poisoned": poisoned_m, **details}))
    return 0


def cmd_target(args):
    g = load_edge_list(args.data)
    mode, budget, target, pairs = args.mode, args.budget, args.target, None
    if args.spec:
        spec = load_target_spec(args.spec)
        mode = spec["mode"]
        budget = spec.get("budget", budget)
        target = spec.get("target", target)
        pairs = spec.get("pairs")
    if mode is None:
        raise UsageError("--mode or --spec is required")
    out = _out_dir(args.out) if args.out else None
    if mode == "class":
        if target is None or not args.labels:
            raise UsageError("class mode needs --target and --labels")
        labels = load_labels(args.labels, g.n)
        report = targeted_class_attack(g, int(target), labels, K=args.K, window=args.window,
                                       negatives=args.negatives, seed=args.seed, budget=budget)
        result = report.to_dict()
        if args.baseline:
            flips = random_target_flips(g, int(target), report.budget, args.seed)
            result["random_margin"] = svd_target_margin(apply_flips(g, flips), int(target), labels, args.K,
                                                        args.window, args.negatives, seed=args.seed)
    else:
        if pairs is None and args.pairs:
            pairs = np.loadtxt(args.pairs, dtype=np.int64, ndmin=2)
        if pairs is None:
            targets = sample_link_targets(g, 0.1, 3, args.seed)
            train, tp, tl = targets.train_graph, targets.pairs, targets.labels
        else:
            pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 3)
            tp, tl = pairs[:, :2], pairs[:, 2]
            pos = [EdgeFlip(int(min(i, j)), int(max(i, j)), -1) for (i, j), l in zip(tp, tl) if l and g.has_edge(i, j)]
            train = apply_flips(g, pos)
        if budget is None:
            budget = int(round(0.125 * g.num_edges))
        cands = link_candidates(train, tp, seed=args.seed)
        model = SurrogateModel.fit(train, args.K, args.window)
        plan = targeted_link_attack(train, tp, tl, int(budget), cands, args.K, args.window, surrogate=model)
        result = {"mode": "link", "budget": int(budget), "n_candidates": len(cands),
                  "clean_surrogate_ap": plan.config["clean_surrogate_ap"]}
        if out:
            plan.to_json(out / "plan.json")
    if out:
        with open(out / "target.json", "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=1)
    print(json.dumps(result))
    return 0


def cmd_approx_check(args):
    g = load_edge_list(args.data)
    report = approx_quality_report(g, cached_spectrum(g), args.samples, args.seed, args.window)
    if args.out:
        out = _out_dir(args.out)
        report.to_csv(out / "approx.csv", out / "bounds.csv")
    print(json.dumps(report.summary))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="graphpoison", description="Edge-flip poisoning of node embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        if data:
            p.add_argument("--data", required=True, help="edge list file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--K", type=int, default=64, help="embedding dimension")
        p.add_argument("--window", type=int, default=5)
        p.add_argument("--negatives", type=int, default=5)
        p.add_argument("--out", default=None)

    p = sub.add_parser("attack", help="plan a general attack")
    common(p)
    p.set_defaults(K=32, func=cmd_attack)
    p.add_argument("--labels", default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default="dw3")
    p.add_argument("--flips", type=int, required=True, help="signed budget: <0 removes, >0 adds")
    p.add_argument("--candidates", type=int, default=20000)
    p.add_argument("--restricted", type=float, default=0.0)
    p.add_argument("--abr-multiplier", type=int, default=4)
    p.add_argument("--laplacian", choices=("rw", "sym", "unnormalized"), default="rw")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(out="out")

    p = sub.add_parser("evaluate", help="retrain and evaluate a stored plan")
    common(p, data=False)
    p.add_argument("--data", default=None)
    p.add_argument("--plan", required=True)
    p.add_argument("--task", choices=("class", "link"), default="class")
    p.add_argument("--labels", default=None)
    p.add_argument("--eval-seeds", type=int, default=10)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("target", help="targeted attack on one node or a pair set")
    common(p)
    p.add_argument("--mode", choices=("class", "link"), default=None)
    p.add_argument("--spec", default=None, help="JSON target spec")
    p.add_argument("--target", type=int, default=None)
    p.add_argument("--pairs", default=None, help="text file of 'i j label' rows")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--labels", default=None)
    p.add_argument("--baseline", action="store_true", help="also report the random-flip margin")
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("approx-check", help="first-order eigenvalue quality report")
    common(p)
    p.add_argument("--samples", type=int, default=500)
    p.set_defaults(func=cmd_approx_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GraphPoisonError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code


if __name__ == "__main__":
    sys.exit(main())
