"""The daily active-learning loop for one (strategy, repetition) cell.

Every day: train on the current labeled set, score the day's transactions,
alert ``k - q`` highest-risk items plus ``q`` exploratory ones, ask the
oracle, pseudo-label ``m`` unqueried transactions as genuine, extend the
training set and advance the verification-latency clock.

Two pipelines are supported. ``transaction``: one forest (plain bootstrap by
default) on all of the labeled set, alerts are transactions. ``card``:
class-balanced delayed and feedback forests mixed by :class:`~fraudstream.models.WeightedEnsemble`,
transaction scores are combined per card and alerts are cards.
"""

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..evaluation import RunRecord, auc_pr, auc_roc, fraud_amount_ratio, topk_precision
from ..exceptions import TrainingError, UndefinedMetricError
from ..models import BalancedForest, WeightedEnsemble
from ..strategies import (
    combine_grouped,
    explore_select,
    hrq_select,
    oversample,
    pca_outlierness,
    qfu_select,
    qfu_update,
    srn_filter,
    sssl_pseudo_label,
)
from ..viz import PCAProjection
from .ledger import LabelLedger, Oracle

logger = logging.getLogger(__name__)


def init_training_set(ds, warmup_days, rng):
    """All warmup frauds plus as many uniformly drawn warmup genuines.

    Returns ``(rows, labels)`` sorted by row.
    """
    if not 1 <= warmup_days < ds.n_days:
        raise ValueError(f"warmup_days must lie in [1, {ds.n_days})")
    rows = np.arange(ds._day_bounds[warmup_days])
    y = ds.y[rows]
    fraud = rows[y == 1]
    if fraud.size == 0:
        raise TrainingError("no frauds in the warmup window; use a longer warmup")
    genuine = rows[y == 0]
    pick = np.sort(rng.choice(genuine, size=min(fraud.size, genuine.size), replace=False))
    out = np.concatenate([fraud, pick])
    order = np.argsort(out)
    return out[order], ds.y[out[order]].astype(np.int8)


def seed_for(*parts):
    """Stable 32-bit seed derived from integers/strings."""
    ints = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class DayState:
    day: int
    scores: np.ndarray  # transaction scores for the day's pool
    exploit: np.ndarray  # alerted rows (transaction pipeline) or card codes
    explore: np.ndarray
    pseudo: np.ndarray  # rows pseudo-labeled genuine
    revealed: np.ndarray  # rows whose truth the investigators returned
    record: RunRecord
    card_scores: np.ndarray = None
    extras: dict = field(default_factory=dict)


class Simulation:
    """Runs the loop for one strategy over one dataset and one repetition.

    Parameters
    ----------
    ds : Dataset
    cfg : ExperimentConfig
    strategy : str
        Strategy id, parsed with the budgets of ``cfg``.
    rep : int
    initial : (rows, labels)
        Initial balanced training set, shared across strategies of a repetition.
    """

    def __init__(self, ds, cfg, strategy, rep, initial):
        self.ds = ds
        self.cfg = cfg
        self.spec = cfg.strategy_spec(strategy)
        self.rep = rep
        self.card_mode = cfg.pipeline == "card"
        self.ledger = LabelLedger(len(ds))
        self.oracle = Oracle(ds.y, budget=self.spec.k)
        self.rng = np.random.default_rng(seed_for(cfg.seed, rep, "strategy", self.spec.name))
        self._rank_to_row = np.empty(len(ds), dtype=np.int64)
        self._rank_to_row[ds.trx_rank] = np.arange(len(ds))
        self.clock_day = -1  # last day whose rows carry delayed truth

        rows, labels = initial
        self.initial_rows = np.asarray(rows, dtype=np.int64)
        self.initial_labels = np.asarray(labels, dtype=np.int8)
        self.ledger.record_delayed(self.initial_rows, self.initial_labels, cfg.warmup - 1)
        # transaction pipeline: label of each row in the training set, -1 = absent
        self.train_label = np.full(len(ds), -1, dtype=np.int8)
        self.train_label[self.initial_rows] = self.initial_labels
        self.synthetic_X = []
        # card pipeline: feedback store (rows, labels, day, is_pseudo) + synthetic genuines
        self.fb_rows, self.fb_labels, self.fb_day, self.fb_pseudo = [], [], [], []
        self.fb_syn = []  # (day, X)
        self.advance_clock(cfg.warmup - cfg.delay)

    # -- clock ---------------------------------------------------------------

    def advance_clock(self, upto_day):
        """Give delayed truth to every row from a day <= ``upto_day``."""
        upto_day = min(upto_day, self.ds.n_days - 1)
        if upto_day <= self.clock_day:
            return
        lo = self.ds._day_bounds[self.clock_day + 1]
        hi = self.ds._day_bounds[upto_day + 1]
        rows = np.arange(lo, hi)
        labels = self.oracle.delayed(rows)
        sup = self.ledger.record_delayed(rows, labels, upto_day)
        if sup.size and not self.card_mode:
            # superseded pseudo-labels take their true class in the training set
            self.train_label[sup] = self.ledger.label[sup]
        self.clock_day = upto_day

    # -- models --------------------------------------------------------------

    def _forest(self, day, tag):
        return BalancedForest(random_state=seed_for(self.cfg.seed, self.rep, day, tag),
                              **self.cfg.forest_params())

    def _train_transaction_model(self, day):
        rows = np.flatnonzero(self.train_label >= 0)
        X = self.ds.X[rows]
        y = self.train_label[rows].astype(np.int64)
        if self.synthetic_X:
            S = np.vstack(self.synthetic_X)
            X = np.vstack([X, S])
            y = np.concatenate([y, np.zeros(len(S), dtype=np.int64)])
        return self._forest(day, "model").fit(X, y)

    def _train_card_model(self, day):
        cfg = self.cfg
        hi_day = day - cfg.delay
        lo_day = hi_day - cfg.delayed_window + 1
        b = self.ds._day_bounds
        win = np.arange(b[max(lo_day, 0)], b[max(hi_day + 1, 0)])
        win = win[self.ledger.state[win] != 0]
        rows = np.union1d(self.initial_rows, win)
        y = self.ledger.label[rows].astype(np.int64)
        X = self.ds.X[rows]
        fb_rows, fb_labels, fb_pseudo, fb_X_syn = self._feedback_window(day)
        if cfg.pseudo_labels_in in ("delayed", "both"):
            pr = fb_rows[fb_pseudo]
            X = np.vstack([X, self.ds.X[pr]])
            y = np.concatenate([y, np.zeros(len(pr), dtype=np.int64)])
        delayed_model = self._forest(day, "delayed").fit(X, y)

        if cfg.pseudo_labels_in == "delayed":
            fb_rows, fb_labels = fb_rows[~fb_pseudo], fb_labels[~fb_pseudo]
        Xf = self.ds.X[fb_rows]
        yf = fb_labels.astype(np.int64)
        if fb_X_syn is not None:
            Xf = np.vstack([Xf, fb_X_syn])
            yf = np.concatenate([yf, np.zeros(len(fb_X_syn), dtype=np.int64)])
        feedback_model = None
        if (yf == 1).any() and (yf == 0).any():
            feedback_model = self._forest(day, "feedback").fit(Xf, yf)
        else:
            logger.info("day %d: no two-class feedback yet, using the delayed model only", day)
        return WeightedEnsemble(delayed_model, feedback_model, cfg.w_delayed)

    def _feedback_window(self, day):
        if not self.fb_rows:
            e = np.empty(0, dtype=np.int64)
            return e, e.astype(np.int8), e.astype(bool), None
        rows = np.concatenate(self.fb_rows)
        labels = np.concatenate(self.fb_labels)
        days = np.concatenate(self.fb_day)
        pseudo = np.concatenate(self.fb_pseudo)
        keep = days >= day - self.cfg.feedback_window
        # pseudo-labels whose truth arrived through the clock are dropped
        keep &= ~(pseudo & self.ledger.superseded[rows])
        syn = [X for d, X in self.fb_syn if d >= day - self.cfg.feedback_window]
        return rows[keep], labels[keep], pseudo[keep], (np.vstack(syn) if syn else None)

    # -- selection helpers -----------------------------------------------------

    def _ids(self, rows):
        return self.ds.trx_rank[rows]

    def _rows(self, ids):
        return self._rank_to_row[np.asarray(ids, dtype=np.int64)]

    def _outlierness(self, day, rows):
        lo = max(0, day - self.cfg.pca_window + 1)
        window = np.arange(self.ds._day_bounds[lo], self.ds._day_bounds[day + 1])
        window = window[self.ledger.state[window] == 0]
        pca = PCAProjection(n_components=None).fit(self.ds.X[window])
        return pca_outlierness(pca, self.ds.X[rows], self.cfg.pca_variance)

    def _explore(self, day, ids, scores, rows_for_p, q):
        spec = self.spec
        out = None
        if spec.explore == "P":
            out = self._outlierness(day, rows_for_p)
        return explore_select(spec.explore, ids, scores, q, self.rng, spec.rho, out, spec.center)

    def _extend_training(self, day, revealed, labels, pseudo):
        """Add today's feedback and pseudo-labels to the training data."""
        spec = self.spec
        neg = revealed[labels == 0]
        if spec.retain_negatives < 1.0:
            keep = srn_filter(neg, spec.retain_negatives, self.rng)
        else:
            keep = neg
        fb = np.concatenate([revealed[labels == 1], keep])
        fb_lab = self.ledger.label[fb]
        syn = None
        if spec.oversampler and spec.m > 0:
            if self.card_mode:
                frows, flabs, _, fsyn = self._feedback_window(day + 1)
                target = self.ds.X[frows[flabs == 0]]
                if fsyn is not None:
                    target = np.vstack([target, fsyn])
                target = np.vstack([target, self.ds.X[keep]])
            else:
                target = self.ds.X[np.flatnonzero(self.train_label == 0)]
                if self.synthetic_X:
                    target = np.vstack([target] + self.synthetic_X)
            if len(target):
                syn = oversample(spec.oversampler, target, spec.m, spec.k_neighbors, self.rng).X
        if self.card_mode:
            self.fb_rows += [fb, pseudo]
            self.fb_labels += [fb_lab, np.zeros(len(pseudo), dtype=np.int8)]
            self.fb_day += [np.full(len(fb), day), np.full(len(pseudo), day)]
            self.fb_pseudo += [np.zeros(len(fb), dtype=bool), np.ones(len(pseudo), dtype=bool)]
            if syn is not None:
                self.fb_syn.append((day, syn))
        else:
            self.train_label[fb] = fb_lab
            self.train_label[pseudo] = 0
            if syn is not None:
                self.synthetic_X.append(syn)

    # -- the day ---------------------------------------------------------------

    def run_day(self, day):
        ds, cfg = self.ds, self.cfg
        self.oracle.start_day(day)
        pool = ds.day_rows(day)
        if pool.size == 0:
            logger.info("day %d: empty pool, skipped", day)
            return None
        if self.card_mode:
            model = self._train_card_model(day)
        else:
            model = self._train_transaction_model(day)
        scores = model.score_samples(ds.X[pool])
        if self.card_mode:
            state = self._card_day(day, pool, scores)
        else:
            state = self._transaction_day(day, pool, scores)
        self.advance_clock(day - cfg.delay + 1)
        return state

    def _transaction_day(self, day, pool, scores):
        spec = self.spec
        ids = self._ids(pool)
        exploit = hrq_select(ids, scores, spec.exploit_budget)
        explore = ids[:0]
        if spec.q > 0 and spec.explore:
            rest = ~np.isin(ids, exploit)
            explore = self._explore(day, ids[rest], scores[rest], pool[rest], spec.q)
        sel_rows = self._rows(np.concatenate([exploit, explore]))
        labels = np.concatenate([self.oracle.label([r]) for r in sel_rows]) if sel_rows.size else \
            np.empty(0, dtype=np.int8)
        self.ledger.record_investigator(sel_rows, labels, day)

        pseudo = np.empty(0, dtype=np.int64)
        if spec.sssl and spec.m > 0:
            rest = ~np.isin(pool, sel_rows)
            pids = sssl_pseudo_label(spec.sssl, ids[rest], scores[rest], spec.m, self.rng,
                                     spec.rho, spec.center)
            pseudo = self._rows(pids)
            self.ledger.record_pseudo(pseudo, day)
        self._extend_training(day, sel_rows, labels, pseudo)

        truth = self.oracle.evaluation_truth(pool)
        alerted_cards = np.unique(self.ds.card_code[sel_rows])
        record = self._record(day, scores, truth, self.ds.card_code[pool], alerted_cards, pool)
        return DayState(day, scores, self._rows(exploit), self._rows(explore), pseudo, sel_rows, record)

    def _card_day(self, day, pool, scores):
        ds, spec, cfg = self.ds, self.spec, self.cfg
        codes = ds.card_code[pool]
        cards, card_scores = combine_grouped(scores, codes, spec.combiner, spec.alpha, spec.eps)
        _, card_max = combine_grouped(scores, codes, "MF")

        exploit = cards[:0]
        explore = cards[:0]
        if spec.qfu:
            counters = qfu_update({}, codes, scores, spec.v, spec.center)
            if cfg.qfu_mode == "replace":
                exploit = np.array(qfu_select(counters, spec.k, cards.tolist()), dtype=np.int64)
            else:
                exploit = hrq_select(cards, card_scores, spec.exploit_budget)
                rest = [c for c in cards.tolist() if c not in set(exploit.tolist())]
                explore = np.array(qfu_select(counters, spec.q, rest), dtype=np.int64)
        else:
            exploit = hrq_select(cards, card_scores, spec.exploit_budget)
            if spec.q > 0 and spec.explore:
                rest = ~np.isin(cards, exploit)
                card_out = None
                if spec.explore == "P":
                    trx_out = self._outlierness(day, pool)
                    card_out = np.full(len(cards), -np.inf)
                    np.maximum.at(card_out, np.searchsorted(cards, codes), trx_out)
                    card_out = card_out[rest]
                explore = explore_select(spec.explore, cards[rest], card_max[rest], spec.q, self.rng,
                                         spec.rho, card_out, spec.center)
        alerted = np.concatenate([exploit, explore]).astype(np.int64)

        revealed, labels = [], []
        for c in alerted.tolist():
            r = ds.card_rows(c)
            r = r[(ds.day[r] <= day)]
            r = r[self.ledger.state[r] == 0]  # pseudo-labels wait for delayed truth
            lab = self.oracle.label(r)
            revealed.append(r)
            labels.append(lab)
        revealed = np.concatenate(revealed) if revealed else np.empty(0, dtype=np.int64)
        labels = np.concatenate(labels) if labels else np.empty(0, dtype=np.int8)
        self.ledger.record_investigator(revealed, labels, day, units=len(alerted))

        pseudo = np.empty(0, dtype=np.int64)
        if spec.sssl and spec.m > 0:
            rest = ~np.isin(codes, alerted)
            ids = self._ids(pool[rest])
            pids = sssl_pseudo_label(spec.sssl, ids, scores[rest], spec.m, self.rng, spec.rho, spec.center)
            pseudo = self._rows(pids)
            self.ledger.record_pseudo(pseudo, day)
        self._extend_training(day, revealed, labels, pseudo)

        truth = self.oracle.evaluation_truth(pool)
        card_truth = np.zeros(len(cards), dtype=np.int64)
        np.maximum.at(card_truth, np.searchsorted(cards, codes), truth)
        record = self._record(day, card_scores, card_truth, codes, alerted, pool, trx_truth=truth)
        return DayState(day, scores, exploit, explore, pseudo, revealed, record, card_scores)

    def _record(self, day, scores, truth, pool_cards, alerted_cards, pool, trx_truth=None):
        trx_truth = truth if trx_truth is None else trx_truth

        def safe(fn, *a):
            try:
                return fn(*a)
            except UndefinedMetricError:
                return float("nan")

        return RunRecord(
            strategy=self.spec.name,
            rep=self.rep,
            day=day,
            topk_precision=safe(topk_precision, scores, truth, self.spec.k) if self.spec.k else float("nan"),
            auc_pr=safe(auc_pr, scores, truth),
            auc_roc=safe(auc_roc, scores, truth),
            fraud_amount_ratio=safe(fraud_amount_ratio, alerted_cards, pool_cards, trx_truth,
                                    self.ds.amount[pool]),
        )

    def eval_days(self):
        first = self.cfg.warmup
        last = self.ds.n_days if self.cfg.eval_days is None else min(self.ds.n_days, first + self.cfg.eval_days)
        return range(first, last)

    def run(self):
        """Run every evaluation day; returns the list of :class:`RunRecord`."""
        out = []
        for day in self.eval_days():
            st = self.run_day(day)
            if st is not None:
                out.append(st.record)
        return out


def run_day(sim, day):
    """Functional alias of :meth:`Simulation.run_day`."""
    return sim.run_day(day)
