"""Detection metrics and paired statistical comparison of strategies."""

import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy.stats import rankdata

from ._validation import check_scores
from .exceptions import ComparisonError, UndefinedMetricError

__all__ = [
    "RunRecord",
    "topk_precision",
    "auc_roc",
    "auc_pr",
    "fraud_amount_ratio",
    "wilcoxon_paired",
    "WilcoxonResult",
    "rank_strategies",
    "Ranking",
    "write_records",
    "read_records",
    "METRICS",
]

# CLI metric names -> RunRecord columns
METRICS = {
    "topk": "topk_precision",
    "aucpr": "auc_pr",
    "aucroc": "auc_roc",
    "amount": "fraud_amount_ratio",
}

EXACT_MAX_N = 25


def _scored_truth(scores, truth):
    s = check_scores(scores)
    t = np.asarray(truth)
    if t.shape != s.shape:
        raise ValueError("scores and truth must have the same length")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("truth must be 0/1")
    return s, t.astype(np.int64)


def topk_precision(scores, truth, k=100):
    """Fraction of frauds among the ``k`` highest scores (ties: input order)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s, t = _scored_truth(scores, truth)
    if s.size == 0:
        raise UndefinedMetricError("top-k precision of an empty set")
    top = np.argsort(-s, kind="stable")[:k]
    return float(t[top].mean())


def auc_roc(scores, truth):
    """Mann-Whitney AUC: P(s+ > s-) + 0.5 * P(s+ = s-)."""
    s, t = _scored_truth(scores, truth)
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC-ROC needs both classes")
    ranks = rankdata(s)
    u = ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(scores, truth):
    """Average precision; equal scores form one threshold block."""
    s, t = _scored_truth(scores, truth)
    n_pos = int(t.sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one fraud")
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), s.size - 1]
    tp = np.cumsum(t)[last]
    seen = last + 1
    d_tp = np.diff(np.r_[0, tp])
    return float(np.sum(d_tp * (tp / seen)) / n_pos)


def fraud_amount_ratio(alerted_cards, card_ids, truth, amounts):
    """Fraudulent amount on alerted cards over the day's total amount."""
    amounts = np.asarray(amounts, dtype=np.float64)
    truth = np.asarray(truth)
    total = amounts.sum()
    if not total > 0:
        raise UndefinedMetricError("zero daily transacted amount")
    hit = np.isin(np.asarray(card_ids), np.asarray(list(alerted_cards))) & (truth == 1)
    return float(amounts[hit].sum() / total)


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank
# ---------------------------------------------------------------------------

class WilcoxonResult(NamedTuple):
    pvalue: float
    statistic: float  # W+ (sum of ranks of positive differences)
    n: int  # non-zero differences
    method: str  # "exact", "normal" or "degenerate"

    @property
    def degenerate(self):
        return self.method == "degenerate"


def _exact_sf_cdf(ranks2, w2):
    """P(W2 >= w2), P(W2 <= w2) for W2 = sum of doubled ranks with random signs."""
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in ranks2.tolist():
        counts[r:] = counts[r:] + counts[:-r]
    n = len(ranks2)
    denom = 2.0 ** n
    return counts[w2:].sum() / denom, counts[:w2 + 1].sum() / denom


def wilcoxon_paired(a, b):
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and ties mid-ranked. The null distribution
    is enumerated exactly (over the observed mid-ranks) for up to 25 pairs;
    above that a tie-corrected normal approximation with continuity
    correction is used. All-zero differences return ``p = 1`` with method
    ``"degenerate"``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("a and b must be 1-D and of equal length")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0, "degenerate")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        w2 = int(round(2 * w_plus))
        upper, lower = _exact_sf_cdf(ranks2, w2)
        return WilcoxonResult(min(1.0, 2.0 * min(upper, lower)), w_plus, n, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    return WilcoxonResult(min(1.0, math.erfc(z / math.sqrt(2.0))), w_plus, n, "normal")


# ---------------------------------------------------------------------------
# run records and strategy ranking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    strategy: str
    rep: int
    day: int
    topk_precision: float
    auc_pr: float
    auc_roc: float
    fraud_amount_ratio: float


RECORD_FIELDS = [f.name for f in fields(RunRecord)]


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else str(v)


def write_records(records, path_or_file):
    """CSV with header ``strategy,rep,day,topk_precision,...``; floats as repr."""
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", encoding="utf-8", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([_fmt(getattr(r, f)) for f in RECORD_FIELDS])
    finally:
        if own:
            fh.close()


def read_records(path):
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECORD_FIELDS:
            raise ComparisonError(f"unexpected record header {reader.fieldnames}")
        for row in reader:
            out.append(RunRecord(
                strategy=row["strategy"], rep=int(row["rep"]), day=int(row["day"]),
                **{f: float(row[f]) for f in RECORD_FIELDS[3:]},
            ))
    return out


@dataclass
class Ranking:
    metric: str
    significance: float
    best: str
    best_set: list
    summary: dict  # strategy -> {mean, median, q1, q3, pvalue, n_pairs}

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def rank_strategies(records, metric="topk_precision", significance=0.05):
    """Best strategy by mean plus those not significantly worse than it.

    Records are paired on ``(rep, day)``; pairs where either side is NaN are
    dropped from that comparison.
    """
    metric = METRICS.get(metric, metric)
    if metric not in RECORD_FIELDS[3:]:
        raise ValueError(f"unknown metric {metric!r}")
    table = {}
    for r in records:
        cell = table.setdefault(r.strategy, {})
        key = (r.rep, r.day)
        if key in cell:
            raise ComparisonError(f"duplicate record for {r.strategy} rep={r.rep} day={r.day}")
        cell[key] = getattr(r, metric)
    if not table:
        raise ComparisonError("no records")
    grids = {s: frozenset(c) for s, c in table.items()}
    ref_grid = next(iter(grids.values()))
    for s, g in grids.items():
        if g != ref_grid:
            raise ComparisonError(f"strategy {s!r} has a different day x repetition grid")
    keys = sorted(ref_grid)
    cols = {s: np.array([table[s][k] for k in keys], dtype=np.float64) for s in sorted(table)}
    means = {s: float(np.nanmean(v)) if np.isfinite(v).any() else float("nan") for s, v in cols.items()}
    best = max(sorted(cols), key=lambda s: (means[s] if np.isfinite(means[s]) else -np.inf))

    summary, best_set = {}, []
    for s, v in cols.items():
        ok = np.isfinite(v) & np.isfinite(cols[best])
        if s == best:
            res = WilcoxonResult(1.0, 0.0, 0, "degenerate")
        else:
            res = wilcoxon_paired(v[ok], cols[best][ok])
        fin = v[np.isfinite(v)]
        q1, med, q3 = (np.percentile(fin, [25, 50, 75]) if fin.size else (np.nan,) * 3)
        summary[s] = {
            "mean": means[s],
            "median": float(med),
            "q1": float(q1),
            "q3": float(q3),
            "pvalue": res.pvalue,
            "n_pairs": int(ok.sum()),
        }
        if res.pvalue >= significance:
            best_set.append(s)
    return Ranking(metric, significance, best, best_set, summary)
