"""Command-line entry point: ``pals <subcommand>``.

Exit codes: 0 success, 1 runtime or data error, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from pals import UNLABELED
from pals.config import load_config
from pals.errors import ConfigurationError, PalsError, RunAborted, UsageError
from pals.evaluation.datasets import (
    load_manifest,
    load_session,
    read_feature_csv,
    write_feature_csv,
)
from pals.evaluation.experiments import (
    RECIPES,
    SKIPPED,
    evaluate,
    quarter_counts,
    run_experiment,
    write_report,
    write_rows,
)
from pals.evaluation.synthetic import SyntheticStreamSpec, generate_synthetic
from pals.graph import Instance, dump_graph
from pals.offline import run_offline
from pals.oracle import InteractiveOracle, ReplayOracle
from pals.pipeline import stream_features
from pals.streaming import POLICIES, run_stream, seed_model, static_lambda

log = logging.getLogger("pals")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_sets(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _config(args):
    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    if getattr(args, "selection", None) is not None:
        overrides["selection"] = args.selection
    if getattr(args, "policy", None) is not None:
        overrides["policy"] = args.policy
    return load_config(args.config, overrides).validate()


def _run_dir(out, kind, seed):
    stamp = time.strftime("%Y%m%dT%H%M%S")
    path = Path(out) / f"run-{kind}-{stamp}-{seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _oracle(kind, labels, timeout=None):
    if kind == "interactive":
        return InteractiveOracle(timeout=timeout)
    return ReplayOracle(labels)


def _read_tables(paths):
    """Stack feature CSVs; times from later files continue after earlier ones."""
    Xs, ys, ts, names, offset = [], [], [], None, 0.0
    for p in paths:
        X, y, t, n = read_feature_csv(p)
        if names is not None and n != names:
            raise UsageError(f"{p}: feature columns differ from {paths[0]}")
        names = n
        Xs.append(X)
        ys.append(y)
        ts.append(t + offset)
        if len(t):
            offset = ts[-1][-1] + 1.0
    return np.vstack(Xs), np.concatenate(ys), np.concatenate(ts), names


# ---------------------------------------------------------------- features

def cmd_features(args):
    cfg = _config(args)
    if args.manifest is None:
        raise UsageError("--manifest is required")
    manifest_path = Path(args.manifest)
    if not (manifest_path.exists() or (manifest_path / "manifest.json").exists()):
        raise UsageError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for session in args.sessions:
        stream = load_session(session, manifest)
        X, y, start, names = stream_features(stream, cfg.window_seconds, cfg.cutoff_hz)
        target = out / f"{Path(session).stem}.features.csv"
        write_feature_csv(target, X, y, start, names)
        print(f"{target}: {len(X)} windows x {len(names)} features")
    return 0


# ---------------------------------------------------------------- train-offline

def cmd_train_offline(args):
    cfg = _config(args)
    if cfg.seed is None:
        raise UsageError("--seed is required")
    X, y, _, names = _read_tables(args.pool)
    ids = list(range(len(X)))
    labeled = []
    if args.labeled:
        LX, Ly, _, lnames = _read_tables(args.labeled)
        if lnames != names:
            raise UsageError("labeled and pool feature columns differ")
        base = len(X)
        labeled = [Instance(base + i, LX[i], int(Ly[i]))
                   for i in range(len(LX)) if Ly[i] != UNLABELED]
    pool = [Instance(i, X[i]) for i in ids]
    oracle = _oracle(args.oracle, {i: int(y[i]) for i in ids if y[i] != UNLABELED},
                     args.timeout)
    ocfg = cfg.offline_config()
    test = _read_tables(args.test) if args.test else None
    curve = {}

    def track(it, graph, scaler):
        if test is not None and graph.labeled_mask.any():
            curve[it] = evaluate(graph, scaler, test[0], test[1])

    run_dir = _run_dir(args.out, "train-offline", cfg.seed)
    (run_dir / "config.json").write_text(cfg.dumps())
    try:
        res = run_offline(labeled, pool, oracle, ocfg, on_iteration=track)
    except RunAborted as exc:
        _write_queries(run_dir / "queries.csv", exc.log)
        raise
    _write_queries(run_dir / "queries.csv", res.queries)
    rows = []
    for st in res.iteration_stats:
        row = dict(st)
        m = curve.get(st["iteration"])
        if m is not None:
            row.update(precision=m["precision"], recall=m["recall"], f_score=m["f_score"])
        rows.append(row)
    write_rows(run_dir / "iterations.csv", rows)
    dump_graph(res.graph, run_dir / "graph.json")
    summary = {"queries": len(res.queries), "feature_names": list(names)}
    if test is not None:
        summary["final"] = evaluate(res.graph, res.scaler, test[0], test[1])
    _write_json(run_dir / "summary.json", summary)
    print(f"{run_dir}: {len(res.queries)} queries")
    return 0


def _write_queries(path, records):
    write_rows(path, [{"iteration": q.iteration, "instance_id": q.instance_id,
                       "entropy": q.entropy, "label": q.label, "strategy": q.strategy}
                      for q in records])


# ---------------------------------------------------------------- simulate-stream

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_events(path, events):
    with open(path, "w") as fh:
        fh.write("t_ms,entropy,lambda,decision,true_label_if_queried,predicted_label\n")
        for e in events:
            fh.write(",".join(_cell(v) for v in (e.t_ms, e.entropy, e.lam, e.decision,
                                                 e.true_label, e.predicted_label)) + "\n")


def cmd_simulate_stream(args):
    cfg = _config(args)
    if cfg.policy == "best" and not args.two_pass:
        raise UsageError("the best policy replays the stream twice; pass --two-pass")
    if cfg.seed is None:
        raise UsageError("--seed is required")
    if args.synthetic:
        spec = SyntheticStreamSpec(**{**cfg.synthetic, "seed": cfg.seed})
        d = generate_synthetic(spec)
        lab_X, lab_y = d.lab_X, d.lab_y
        t, X, y, test = d.stream_t_ms, d.stream_X, d.stream_y, (d.test_X, d.test_y)
    else:
        if not args.lab or not args.stream:
            raise UsageError("give --lab and --stream feature CSVs, or --synthetic")
        lab_X, lab_y, _, lab_names = _read_tables(args.lab)
        X, y, t, names = _read_tables(args.stream)
        if names != lab_names:
            raise UsageError("lab and stream feature columns differ")
        keep = lab_y != UNLABELED
        lab_X, lab_y = lab_X[keep], lab_y[keep]
        test = _read_tables(args.test)[:2] if args.test else None
    sm = seed_model(lab_X, lab_y, cfg.lab_labeled_fraction, cfg.kernel_config(),
                    cfg.propagation(), cfg.seed)
    static = None
    if cfg.policy == "static":
        stride = float(np.median(np.diff(t))) if len(t) > 1 else 1.0
        ratio = min(1.0, max(cfg.interval_budget, 1) * stride / (cfg.interval_s * 1000.0))
        static = static_lambda(sm.training_entropies, ratio)
    base = len(lab_y)
    Xs = sm.scaler.transform(X)
    arrivals = [(float(ti), Instance(base + i, Xs[i])) for i, ti in enumerate(t)]
    window_ms = cfg.window_seconds * 1000.0
    contexts = [{"start_ms": float(ti), "end_ms": float(ti) + window_ms} for ti in t]
    labels = {base + i: int(v) for i, v in enumerate(y) if v != UNLABELED}
    oracle = _oracle(args.oracle, labels, args.timeout)
    if args.oracle == "interactive" and args.speedup > 0:
        oracle = _Paced(oracle, args.speedup)
    res = run_stream(sm.graph, arrivals, oracle,
                     cfg.stream_config(static_value=static), contexts=contexts)
    run_dir = _run_dir(args.out, "simulate-stream", cfg.seed)
    (run_dir / "config.json").write_text(cfg.dumps())
    write_events(run_dir / "events.csv", res.events)
    summary = {
        "policy": cfg.policy,
        "static_lambda": static,
        "events": len(res.events),
        "queries": sum(e.decision == "queried" for e in res.events),
        "flagged": sum(e.flagged is not None for e in res.events),
        "queries_per_interval": {str(k): v for k, v in sorted(res.queries_per_interval.items())},
        "quarters": quarter_counts(res.events, cfg.interval_s * 1000.0,
                                   float(t[0]) if len(t) else 0.0),
    }
    if test is not None:
        summary["metrics"] = evaluate(res.graph, sm.scaler, test[0], test[1])
    if isinstance(oracle, (_Paced, InteractiveOracle)):
        inner = oracle.inner if isinstance(oracle, _Paced) else oracle
        write_rows(run_dir / "answers.csv",
                   [{"instance_id": i, "answer": a if a is not None else ""}
                    for i, a in inner.transcript])
    _write_json(run_dir / "summary.json", summary)
    print(f"{run_dir}: {summary['queries']} queries over {summary['events']} windows")
    return 0


class _Paced:
    """Waits out the (scaled) gap between arrivals before prompting."""

    def __init__(self, inner, speedup):
        self.inner = inner
        self.speedup = speedup
        self.last = None

    def query(self, instance_id, context=None):
        t = (context or {}).get("start_ms")
        if t is not None and self.last is not None:
            time.sleep(max(0.0, (t - self.last) / 1000.0 / self.speedup))
        self.last = t
        return self.inner.query(instance_id, context)


# ---------------------------------------------------------------- experiment

def cmd_experiment(args):
    if args.recipe not in RECIPES:
        raise UsageError(f"unknown recipe {args.recipe!r}; valid recipes: {', '.join(RECIPES)}")
    cfg = _config(args)
    if cfg.seed is None:
        raise UsageError("--seed is required")
    report = run_experiment(args.recipe, cfg, synthetic=args.synthetic)
    run_dir = write_report(report, args.out)
    if report.status == SKIPPED:
        print(f"{args.recipe}: {SKIPPED}")
        if args.require_data:
            return 1
        return 0
    for key, value in sorted(report.summary.items()):
        print(f"{key}: {value:.4f}")
    print(f"report: {run_dir}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="pals", description="Proximity-based active learning for eating detection")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("features", parents=[common], help="session CSVs to feature CSVs")
    f.add_argument("sessions", nargs="+")
    f.add_argument("--manifest", help="manifest.json or its dataset directory")
    f.add_argument("--out", default=".")
    f.set_defaults(func=cmd_features)

    o = sub.add_parser("train-offline", parents=[common], help="pool-based training run")
    o.add_argument("pool", nargs="+", help="feature CSVs forming the unlabeled pool")
    o.add_argument("--labeled", nargs="*", help="feature CSVs with initial labels")
    o.add_argument("--test", nargs="*", help="feature CSVs for evaluation")
    o.add_argument("--selection", choices=["entropy", "uniform"])
    o.add_argument("--oracle", choices=["replay", "interactive"], default="replay")
    o.add_argument("--timeout", type=float)
    o.add_argument("--out", default="runs")
    o.set_defaults(func=cmd_train_offline)

    s = sub.add_parser("simulate-stream", parents=[common], help="real-time loop replay")
    s.add_argument("--lab", nargs="*", help="in-lab feature CSVs for the seed model")
    s.add_argument("--stream", nargs="*", help="free-living feature CSVs in time order")
    s.add_argument("--test", nargs="*")
    s.add_argument("--synthetic", action="store_true", help="use a synthetic stream")
    s.add_argument("--policy", choices=POLICIES)
    s.add_argument("--two-pass", action="store_true", help="allow the best policy")
    s.add_argument("--oracle", choices=["replay", "interactive"], default="replay")
    s.add_argument("--timeout", type=float)
    s.add_argument("--speedup", type=float, default=0.0,
                   help="interactive replay pace (0 = no waiting)")
    s.add_argument("--out", default="runs")
    s.set_defaults(func=cmd_simulate_stream)

    e = sub.add_parser("experiment", parents=[common], help="run an experiment recipe")
    e.add_argument("recipe")
    e.add_argument("--synthetic", action="store_true")
    e.add_argument("--require-data", action="store_true")
    e.add_argument("--jobs", type=int)
    e.add_argument("--out", default="runs")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"pals: error: {exc}", file=sys.stderr)
        return 2
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"pals: error: {exc}", file=sys.stderr)
        return 2
    except PalsError as exc:
        print(f"pals: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"pals: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
