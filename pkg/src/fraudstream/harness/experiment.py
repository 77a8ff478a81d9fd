"""Multi-strategy, multi-repetition experiment runner."""

import hashlib
import logging
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..evaluation import RunRecord, rank_strategies
from ..stream import generate_stream, load_dataset
from .simulation import Simulation, init_training_set, seed_for

logger = logging.getLogger(__name__)

_SHARED = {}


@dataclass
class ExperimentResult:
    records: list
    failures: list = field(default_factory=list)  # (strategy, rep, message)
    initial_digests: dict = field(default_factory=dict)  # rep -> sha256 of initial set


def load_experiment_dataset(cfg):
    if cfg.dataset == "synthetic":
        return generate_stream(cfg.generator)
    return load_dataset(cfg.dataset)


def initial_set(ds, cfg, rep):
    rng = np.random.default_rng(seed_for(cfg.seed, rep, "initial"))
    return init_training_set(ds, cfg.warmup, rng)


def digest_initial(initial):
    rows, labels = initial
    h = hashlib.sha256()
    h.update(np.asarray(rows, dtype=np.int64).tobytes())
    h.update(np.asarray(labels, dtype=np.int8).tobytes())
    return h.hexdigest()


def _run_cell(cfg, strategy, rep, initial, ds=None):
    ds = _SHARED["ds"] if ds is None else ds
    try:
        return Simulation(ds, cfg, strategy, rep, initial).run(), None
    except Exception as exc:  # a failing cell must not sink the others
        logger.exception("cell (%s, rep %d) failed", strategy, rep)
        return [], f"{type(exc).__name__}: {exc}"


def run_experiment(cfg, dataset=None):
    """Run every (strategy, repetition) cell of ``cfg``.

    Within a repetition all strategies share the initial training set and the
    model seeds. Records come back ordered by strategy (config order), then
    repetition, then day, whatever ``cfg.n_jobs`` is.
    """
    cfg.validate()
    ds = load_experiment_dataset(cfg) if dataset is None else dataset
    initials = {r: initial_set(ds, cfg, r) for r in range(cfg.repetitions)}
    cells = [(s, r) for s in cfg.strategies for r in range(cfg.repetitions)]

    if cfg.n_jobs == 1 or len(cells) == 1:
        outputs = [_run_cell(cfg, s, r, initials[r], ds) for s, r in cells]
    else:
        workers = os.cpu_count() if cfg.n_jobs < 0 else cfg.n_jobs
        _SHARED["ds"] = ds
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
                futs = [ex.submit(_run_cell, cfg, s, r, initials[r]) for s, r in cells]
                outputs = [f.result() for f in futs]
        finally:
            _SHARED.clear()

    records, failures = [], []
    for (s, r), (recs, err) in zip(cells, outputs):
        records.extend(recs)
        if err is not None:
            failures.append((s, r, err))
    return ExperimentResult(records, failures, {r: digest_initial(i) for r, i in initials.items()})


@dataclass
class SweepResult:
    rows: list  # dicts: m, mean, median, q1, q3, pvalue, in_best_set
    records: list
    initial_digests: dict  # m -> {rep: digest}
    ranking: object = None


def m_sweep(cfg, values, strategy="SR", dataset=None):
    """Top-k precision of ``strategy`` for each pseudo-label budget ``m``.

    Each value reruns the experiment with identical seeds; the rows carry the
    mean precision and the paired comparison against the best ``m``.
    """
    ds = load_experiment_dataset(cfg) if dataset is None else dataset
    records, digests = [], {}
    for m in values:
        res = run_experiment(cfg.with_changes(strategies=(strategy,), m=int(m)), ds)
        digests[m] = res.initial_digests
        records.extend(
            RunRecord(f"m={m}", r.rep, r.day, r.topk_precision, r.auc_pr, r.auc_roc, r.fraud_amount_ratio)
            for r in res.records
        )
    ranking = rank_strategies(records, "topk_precision") if len(values) > 1 else None
    rows = []
    for m in values:
        vals = np.array([r.topk_precision for r in records if r.strategy == f"m={m}"])
        fin = vals[np.isfinite(vals)]
        row = {"m": int(m), "mean": float(fin.mean()) if fin.size else float("nan")}
        if ranking is not None:
            s = ranking.summary[f"m={m}"]
            row.update(median=s["median"], q1=s["q1"], q3=s["q3"], pvalue=s["pvalue"],
                       in_best_set=f"m={m}" in ranking.best_set)
        rows.append(row)
    return SweepResult(rows, records, digests, ranking)
