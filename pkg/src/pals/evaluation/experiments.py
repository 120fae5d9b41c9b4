"""Experiment recipes: kernel choice, selection strategy, budget, threshold policy.

Each recipe runs on the public datasets when they are present under the data
root, or on synthetic stand-ins when ``synthetic=True``. Missing data never
produces numbers: the report comes back with status ``SKIPPED``.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pals import UNLABELED
from pals.errors import ConfigurationError
from pals.evaluation.datasets import find_dataset, load_manifest, load_session, session_files
from pals.evaluation.metrics import ConfusionCounts, f_score, precision, recall
from pals.evaluation.synthetic import SyntheticStreamSpec, generate_synthetic
from pals.graph import Instance, predict_many
from pals.offline import run_offline
from pals.oracle import ReplayOracle
from pals.pipeline import chi2_select, stream_features
from pals.streaming import POLICIES, run_stream, seed_model, static_lambda

log = logging.getLogger(__name__)

RECIPES = ("kernel_compare", "entropy_vs_uniform", "budget_sweep", "lambda_compare",
           "offline_eval")
SKIPPED = "skipped: data unavailable"

# class-prior drift: rare eating for two hours, then frequent (mean ~6.7%)
DRIFT_DEFAULTS = {"duration_s": 4 * 3600.0, "drift_at_s": 2 * 3600.0,
                  "positive_rate": 0.014, "drift_positive_rate": 0.12}


@dataclass
class ExperimentReport:
    run_id: str
    recipe: str
    config: dict
    seeds: list
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    status: str = "ok"


@dataclass
class OfflineTask:
    name: str
    X: np.ndarray
    y: np.ndarray
    select_features: bool = False


@dataclass
class StreamTask:
    subject: str
    lab_X: np.ndarray
    lab_y: np.ndarray
    t_ms: np.ndarray
    X: np.ndarray
    y: np.ndarray
    test_X: np.ndarray
    test_y: np.ndarray


def stratified_split(y, train_fraction, rng):
    """Seeded per-class split; returns sorted (train, test) index arrays."""
    train = []
    for c in np.unique(y):
        members = rng.permutation(np.flatnonzero(y == c))
        n = int(round(train_fraction * len(members)))
        n = min(max(n, 1), len(members) - 1) if len(members) > 1 else len(members)
        train += members[:n].tolist()
    train = np.array(sorted(train), dtype=int)
    test = np.setdiff1d(np.arange(len(y)), train)
    return train, test


def evaluate(graph, scaler, X, y):
    X = np.asarray(X, dtype=float)
    if scaler is not None:
        X = scaler.transform(X)
    pred = predict_many(graph, X).argmax(axis=1)
    c = ConfusionCounts.from_labels(y, pred)
    p, r = precision(c), recall(c)
    return {"precision": p, "recall": r, "f_score": f_score(p, r),
            "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}


# ---------------------------------------------------------------- data

def _dataset_windows(path, cfg):
    manifest = load_manifest(path)
    blocks = {}
    for session in session_files(path):
        stream = load_session(session, manifest)
        X, y, start, names = stream_features(stream, cfg.window_seconds, cfg.cutoff_hz)
        subject = manifest.subject_of(session)
        blocks.setdefault(subject, []).append((X, y, start, names))
    return blocks


def _stack(parts):
    X = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    # sessions of one subject are laid end to end in time
    starts, offset = [], 0.0
    for p in parts:
        if len(p[2]):
            starts.append(p[2] + offset)
            offset = starts[-1][-1] + 1.0
        else:
            starts.append(p[2])
    return X, y, np.concatenate(starts)


def offline_tasks(cfg, synthetic, seed):
    if synthetic:
        data = generate_synthetic(SyntheticStreamSpec(**{**cfg.synthetic, "seed": seed}))
        return [OfflineTask("synthetic", data.stream_X, data.stream_y)]
    tasks = []
    for name in cfg.offline_datasets:
        path = find_dataset(name, cfg.data_dir)
        if path is None:
            return None
        X, y, _ = _stack([p for parts in _dataset_windows(path, cfg).values() for p in parts])
        known = y != UNLABELED
        tasks.append(OfflineTask(name, X[known], y[known], select_features=True))
    return tasks


def stream_tasks(cfg, synthetic, seed, defaults=None):
    if synthetic:
        spec = SyntheticStreamSpec(**{**(defaults or {}), **cfg.synthetic, "seed": seed})
        d = generate_synthetic(spec)
        return [StreamTask(f"synthetic-{seed}", d.lab_X, d.lab_y, d.stream_t_ms, d.stream_X,
                           d.stream_y, d.test_X, d.test_y)]
    lab_path = find_dataset(cfg.lab_dataset, cfg.data_dir)
    wild_path = find_dataset(cfg.stream_dataset, cfg.data_dir)
    if lab_path is None or wild_path is None:
        return None
    lab_X, lab_y, _ = _stack([p for parts in _dataset_windows(lab_path, cfg).values()
                              for p in parts])
    known = lab_y != UNLABELED
    lab_X, lab_y = lab_X[known], lab_y[known]
    mask = chi2_select(lab_X, lab_y, cfg.chi2_keep)
    keep = list(mask.kept_indices)
    tasks = []
    rng = np.random.default_rng(seed)
    for subject, parts in sorted(_dataset_windows(wild_path, cfg).items()):
        X, y, t = _stack(parts)
        ok = y != UNLABELED
        X, y, t = X[ok][:, keep], y[ok], t[ok]
        if len(np.unique(y)) < 2:
            log.warning("subject %s lacks one class; skipped", subject)
            continue
        train, test = stratified_split(y, 1.0 - cfg.stream_test_fraction, rng)
        tasks.append(StreamTask(subject, lab_X[:, keep], lab_y, t[train], X[train], y[train],
                                X[test], y[test]))
    return tasks


# ---------------------------------------------------------------- single runs

def offline_run(task, cfg, seed, selection="entropy", kernel=None, per_iteration=False):
    """One 20%/80% offline run; returns final metrics and optional curve."""
    rng = np.random.default_rng(seed)
    train, test = stratified_split(task.y, cfg.train_fraction, rng)
    X = task.X
    if task.select_features:
        mask = chi2_select(X[train], task.y[train], cfg.chi2_keep)
        X = X[:, list(mask.kept_indices)]
    pool = [Instance(int(i), X[i]) for i in train]
    oracle = ReplayOracle({int(i): int(task.y[i]) for i in train})
    ocfg = cfg.offline_config(seed=seed, selection=selection,
                              kernel=cfg.kernel_config(kernel))
    curve = []

    def track(it, graph, scaler):
        if per_iteration and graph.labeled_mask.any():
            curve.append({"iteration": it, **evaluate(graph, scaler, X[test], task.y[test])})

    res = run_offline([], pool, oracle, ocfg, on_iteration=track)
    synthetic_ids = {res.graph.ids[i] for i in np.flatnonzero(res.graph.synthetic)}
    if synthetic_ids & set(test.tolist()):
        raise RuntimeError("synthetic instance leaked into the evaluation set")
    final = evaluate(res.graph, res.scaler, X[test], task.y[test])
    return {"final": final, "curve": curve, "queries": len(res.queries),
            "queried_eating": sum(q.label for q in res.queries)}


def quarter_counts(events, interval_ms, t0_ms):
    """Queries per quarter of every interval the stream covers to its end."""
    if not events:
        return []
    times = np.array([e.t_ms for e in events])
    stride = float(np.median(np.diff(times))) if len(times) > 1 else 0.0
    # the stream reaches the end of an interval if its last window starts
    # no more than one stride before that end
    reach = times[-1] + stride
    out = {}
    for e in events:
        idx = int((e.t_ms - t0_ms) // interval_ms)
        if t0_ms + (idx + 1) * interval_ms > reach + 1e-9:
            continue
        q = min(3, int(((e.t_ms - t0_ms) - idx * interval_ms) // (interval_ms / 4)))
        out.setdefault(idx, [0, 0, 0, 0])
        if e.decision == "queried":
            out[idx][q] += 1
    return [out[k] for k in sorted(out)]


def stream_run(task, cfg, policy, budget, seed):
    """Seed a model on lab data, stream the subject, score on held-out windows."""
    sm = seed_model(task.lab_X, task.lab_y, cfg.lab_labeled_fraction,
                    cfg.kernel_config(), cfg.propagation(), seed)
    static = None
    if policy == "static":
        stride = float(np.median(np.diff(task.t_ms))) if len(task.t_ms) > 1 else 1.0
        ratio = min(1.0, max(budget, 1) * stride / (cfg.interval_s * 1000.0))
        static = static_lambda(sm.training_entropies, ratio)
    base = len(task.lab_y)
    Xs = sm.scaler.transform(task.X)
    arrivals = [(float(t), Instance(base + i, Xs[i])) for i, t in enumerate(task.t_ms)]
    oracle = ReplayOracle({base + i: int(v) for i, v in enumerate(task.y)})
    res = run_stream(sm.graph, arrivals, oracle, cfg.stream_config(policy, budget, static),
                     t0_ms=float(task.t_ms[0]) if len(task.t_ms) else 0.0)
    metrics = evaluate(res.graph, sm.scaler, task.test_X, task.test_y)
    queried = [e for e in res.events if e.decision == "queried"]
    return {
        "metrics": metrics,
        "queries": len(queried),
        "queried_eating": sum(e.true_label for e in queried),
        "quarters": quarter_counts(res.events, cfg.interval_s * 1000.0,
                                   float(task.t_ms[0]) if len(task.t_ms) else 0.0),
        "events": res.events,
        "static_lambda": static,
    }


# ---------------------------------------------------------------- recipes

def _map(fn, args, jobs):
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, *zip(*args)))
    return [fn(*a) for a in args]


def _offline_job(cfg, synthetic, seed, selection, kernel, per_iteration):
    tasks = offline_tasks(cfg, synthetic, seed)
    if tasks is None:
        return None
    return [(t.name, offline_run(t, cfg, seed, selection, kernel, per_iteration))
            for t in tasks]


def _stream_job(cfg, synthetic, seed, policies, budgets, defaults):
    tasks = stream_tasks(cfg, synthetic, seed, defaults)
    if tasks is None:
        return None
    out = []
    for task in tasks:
        for policy in policies:
            for budget in budgets:
                r = stream_run(task, cfg, policy, budget, seed)
                r.pop("events")
                out.append((task.subject, policy, budget, r))
    return out


def _metric_row(**kw):
    m = kw.pop("metrics")
    return {**kw, "precision": m["precision"], "recall": m["recall"],
            "f_score": m["f_score"]}


def _mean(rows, key, **match):
    vals = [r[key] for r in rows if all(r[k] == v for k, v in match.items())]
    return float(np.mean(vals)) if vals else float("nan")


def _offline_recipe(recipe, cfg, synthetic, seeds):
    if recipe == "kernel_compare":
        variants = [("entropy", "knn"), ("entropy", "rbf")]
    elif recipe == "entropy_vs_uniform":
        variants = [("entropy", cfg.kernel), ("uniform", cfg.kernel)]
    else:
        variants = [("entropy", cfg.kernel), ("uniform", cfg.kernel)]
    per_iter = recipe != "offline_eval"
    args = [(cfg, synthetic, s, sel, kern, per_iter) for s in seeds for sel, kern in variants]
    results = _map(_offline_job, args, cfg.jobs)
    if any(r is None for r in results):
        return None
    final_rows, curve_rows = [], []
    for (_, _, seed, sel, kern, _), res in zip(args, results):
        for dataset, r in res:
            tag = {"dataset": dataset, "seed": seed, "selection": sel, "kernel": kern}
            final_rows.append({**tag, "method": f"pals-{sel}-{kern}",
                               **{k: r["final"][k] for k in ("precision", "recall",
                                                             "f_score")},
                               "queries": r["queries"], "queried_eating": r["queried_eating"]})
            for point in r["curve"]:
                curve_rows.append({**tag, "iteration": point["iteration"],
                                   "precision": point["precision"],
                                   "recall": point["recall"], "f_score": point["f_score"]})
    if recipe == "offline_eval":
        for dataset in sorted({r["dataset"] for r in final_rows}):
            for seed in seeds:
                final_rows.append({"dataset": dataset, "seed": seed, "selection": "-",
                                   "kernel": "-", "method": "majority", "precision": 0.0,
                                   "recall": 0.0, "f_score": 0.0, "queries": 0,
                                   "queried_eating": 0})
    tables = {"final": final_rows}
    if curve_rows:
        tables["curve"] = curve_rows
    summary = {}
    for dataset in sorted({r["dataset"] for r in final_rows}):
        for method in sorted({r["method"] for r in final_rows}):
            summary[f"{dataset}/{method}/f_score"] = _mean(final_rows, "f_score",
                                                          dataset=dataset, method=method)
            summary[f"{dataset}/{method}/recall"] = _mean(final_rows, "recall",
                                                         dataset=dataset, method=method)
    if recipe == "entropy_vs_uniform":
        for dataset in sorted({r["dataset"] for r in final_rows}):
            gaps = []
            for seed in seeds:
                e = _mean(final_rows, "f_score", dataset=dataset, seed=seed,
                          selection="entropy")
                u = _mean(final_rows, "f_score", dataset=dataset, seed=seed,
                          selection="uniform")
                gaps.append(u - e)
            summary[f"{dataset}/max_uniform_minus_entropy"] = float(max(gaps))
    return tables, summary


def _stream_recipe(recipe, cfg, synthetic, seeds):
    if recipe == "budget_sweep":
        policies, budgets, defaults = ["adaptive"], [int(b) for b in cfg.budgets], None
    else:
        policies, budgets, defaults = list(POLICIES), [cfg.interval_budget], DRIFT_DEFAULTS
    args = [(cfg, synthetic, s, policies, budgets, defaults) for s in seeds]
    results = _map(_stream_job, args, cfg.jobs)
    if any(r is None for r in results):
        return None
    rows, quarter_rows = [], []
    for (_, _, seed, *_), res in zip(args, results):
        for subject, policy, budget, r in res:
            rows.append(_metric_row(subject=subject, seed=seed, policy=policy, budget=budget,
                                    metrics=r["metrics"], queries=r["queries"],
                                    queried_eating=r["queried_eating"]))
            if policy == "adaptive":
                for i, q in enumerate(r["quarters"]):
                    quarter_rows.append({"subject": subject, "seed": seed, "budget": budget,
                                         "interval": i, "q1": q[0], "q2": q[1], "q3": q[2],
                                         "q4": q[3]})
    summary = {}
    if recipe == "budget_sweep":
        for b in budgets:
            summary[f"budget_{b}/f_score"] = _mean(rows, "f_score", budget=b)
        tables = {"budget_sweep": rows}
    else:
        for p in policies:
            summary[f"{p}/f_score"] = _mean(rows, "f_score", policy=p)
        tables = {"policies": rows}
    tables["adaptive_quarters"] = quarter_rows
    return tables, summary


def run_experiment(recipe, cfg, synthetic=False, run_id=None):
    """Run ``recipe`` over ``cfg.seeds()``; never fabricates missing data."""
    if recipe not in RECIPES:
        raise ConfigurationError(
            f"unknown recipe {recipe!r}; valid recipes: {', '.join(RECIPES)}")
    cfg.validate()
    seeds = cfg.seeds()
    run_id = run_id or f"run-{recipe}-{time.strftime('%Y%m%dT%H%M%S')}-{cfg.seed}"
    report = ExperimentReport(run_id, recipe, {**cfg.to_dict(), "synthetic_data": synthetic},
                              seeds)
    if recipe in ("budget_sweep", "lambda_compare"):
        out = _stream_recipe(recipe, cfg, synthetic, seeds)
    else:
        out = _offline_recipe(recipe, cfg, synthetic, seeds)
    if out is None:
        report.status = SKIPPED
        return report
    report.tables, report.summary = out
    return report


# ---------------------------------------------------------------- persistence

def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_rows(path, rows):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not rows:
            return
        header = list(rows[0].keys())
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(row.get(k)) for k in header])


def write_report(report, out_dir):
    """Persist under ``out_dir/<run_id>``: config, one CSV per table, summary."""
    run_dir = Path(out_dir) / report.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(report.config, indent=2, sort_keys=True) + "\n")
    for name, rows in report.tables.items():
        write_rows(run_dir / f"{name}.csv", rows)
    summary = {"recipe": report.recipe, "status": report.status, "seeds": report.seeds,
               "metrics": report.summary}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return run_dir
