"""Command line interface: ``fraudstream {generate,run,compare,sweep-m,viz}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .evaluation import METRICS, rank_strategies, read_records, write_records
from .exceptions import ConfigError, DatasetParseError, FraudStreamError
from .harness.config import load_config
from .harness.experiment import m_sweep, run_experiment
from .models import BalancedForest
from .stream import export_dataset, generate_stream, load_dataset
from .viz import (
    density_grid,
    export_overlay,
    fit_pca,
    project,
    score_report,
    write_score_report,
)

logger = logging.getLogger("fraudstream")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _cmd_generate(args):
    cfg = load_config(args.config)
    ds = generate_stream(cfg.generator)
    export_dataset(ds, args.out)
    print(f"wrote {len(ds)} transactions ({int(ds.y.sum())} frauds) over {ds.n_days} days to {args.out}")
    return EXIT_OK


def _cmd_run(args):
    cfg = load_config(args.config)
    if args.jobs is not None:
        cfg.n_jobs = args.jobs
    res = run_experiment(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_records(res.records, os.path.join(args.out, "records.csv"))
    report = {"failures": [list(f) for f in res.failures], "initial_digests": res.initial_digests}
    if res.records:
        report["rankings"] = {m: json.loads(rank_strategies(res.records, m).to_json()) for m in METRICS}
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{len(res.records)} records written to {args.out}")
    for s, r, msg in res.failures:
        print(f"FAILED {s} rep {r}: {msg}", file=sys.stderr)
    return EXIT_RUNTIME if res.failures else EXIT_OK


def _cmd_compare(args):
    ranking = rank_strategies(read_records(args.records), args.metric, args.alpha)
    print(ranking.to_json())
    return EXIT_OK


def _cmd_sweep(args):
    cfg = load_config(args.config)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be integers, got {args.values!r}") from None
    res = m_sweep(cfg, values)
    w = csv.DictWriter(sys.stdout, fieldnames=list(res.rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(res.rows)
    if args.out:
        write_records(res.records, args.out)
    return EXIT_OK


def _read_queries(path, ds):
    """``trx_id,set`` CSV -> {set name: row indices}."""
    index = {t: i for i, t in enumerate(ds.trx_id.tolist())}
    groups = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or "trx_id" not in reader.fieldnames:
            raise DatasetParseError("queries file needs a trx_id column", row=0, column="trx_id")
        for n, row in enumerate(reader, start=1):
            if row["trx_id"] not in index:
                raise DatasetParseError("unknown trx_id", row=n, column="trx_id")
            groups.setdefault(row.get("set") or "queries", []).append(index[row["trx_id"]])
    return {k: np.array(v, dtype=np.int64) for k, v in groups.items()}


def _cmd_viz(args):
    ds = load_dataset(args.dataset)
    train_days = args.train_days if args.train_days is not None else max(1, ds.n_days // 2)
    if not 1 <= train_days < ds.n_days:
        raise ConfigError("--train-days must leave at least one day to score")
    pca = fit_pca(ds.X)
    P = project(pca, ds.X, 2)
    grid = density_grid(P, ds.y, resolution=args.resolution)
    overlays = {}
    if args.queries:
        overlays = {name: P[rows] for name, rows in _read_queries(args.queries, ds).items()}
    export_overlay(grid, overlays, args.out)

    split = ds._day_bounds[train_days]
    model = BalancedForest(n_trees=args.trees, random_state=args.seed).fit(ds.X[:split], ds.y[:split])
    scores = model.score_samples(ds.X[split:])
    write_score_report(score_report(scores, ds.y[split:], args.bins), os.path.join(args.out, "score_report.csv"))
    print(f"wrote figure, grids and score report to {args.out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fraudstream", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic stream as CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--jobs", type=int, default=None)
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("compare", help="rank strategies with paired Wilcoxon tests")
    c.add_argument("--records", required=True)
    c.add_argument("--metric", choices=sorted(METRICS), default="topk")
    c.add_argument("--alpha", type=float, default=0.05)
    c.set_defaults(func=_cmd_compare)

    s = sub.add_parser("sweep-m", help="precision of SR for several pseudo-label budgets")
    s.add_argument("--config", required=True)
    s.add_argument("--values", default="0,250,500,1000,2000,4000")
    s.add_argument("--out", default=None, help="optional records CSV")
    s.set_defaults(func=_cmd_sweep)

    v = sub.add_parser("viz", help="PCA density grids, query overlays and score report")
    v.add_argument("--dataset", required=True)
    v.add_argument("--queries", default=None, help="CSV with trx_id[,set] columns")
    v.add_argument("--out", required=True)
    v.add_argument("--resolution", type=int, default=100)
    v.add_argument("--bins", type=int, default=50)
    v.add_argument("--train-days", type=int, default=None)
    v.add_argument("--trees", type=int, default=20)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=_cmd_viz)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FraudStreamError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
