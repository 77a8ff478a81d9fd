"""Per-transaction label bookkeeping and the investigator oracle."""

import numpy as np

from ..exceptions import BudgetExceededError

UNLABELED, INVESTIGATOR, PSEUDO, DELAYED = 0, 1, 2, 3
STATE_NAMES = {UNLABELED: "Unlabeled", INVESTIGATOR: "InvestigatorLabeled",
               PSEUDO: "PseudoGenuine", DELAYED: "DelayedLabeled"}


class LabelLedger:
    """Label state of every dataset row.

    Transitions allowed: Unlabeled -> any; PseudoGenuine -> Delayed (recorded
    in ``superseded``). Investigator labels are final. ``label`` is -1 while unknown.
    """

    def __init__(self, n_rows):
        self.state = np.zeros(n_rows, dtype=np.int8)
        self.label = np.full(n_rows, -1, dtype=np.int8)
        self.acquired = np.full(n_rows, -1, dtype=np.int32)
        self.superseded = np.zeros(n_rows, dtype=bool)
        self.daily_investigations = {}  # day -> query units (transactions or cards)
        self.daily_pseudo = {}

    def record_investigator(self, rows, labels, day, units=None):
        rows = np.asarray(rows, dtype=np.int64)
        st = self.state[rows]
        if np.any(st == INVESTIGATOR):
            raise ValueError("transaction queried twice")
        if np.any(st != UNLABELED):
            raise ValueError("only unlabeled transactions may be investigated")
        if len(np.unique(rows)) != len(rows):
            raise ValueError("duplicate rows in one investigation")
        self.state[rows] = INVESTIGATOR
        self.label[rows] = labels
        self.acquired[rows] = day
        n = len(rows) if units is None else units
        self.daily_investigations[day] = self.daily_investigations.get(day, 0) + n

    def record_pseudo(self, rows, day):
        rows = np.asarray(rows, dtype=np.int64)
        if np.any(self.state[rows] != UNLABELED):
            raise ValueError("pseudo-labels may only be given to unlabeled transactions")
        self.state[rows] = PSEUDO
        self.label[rows] = 0
        self.acquired[rows] = day
        self.daily_pseudo[day] = self.daily_pseudo.get(day, 0) + len(rows)

    def record_delayed(self, rows, labels, day):
        """Apply delayed truth to ``rows``; returns the pseudo-labeled rows it superseded."""
        rows = np.asarray(rows, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int8)
        st = self.state[rows]
        take = (st == UNLABELED) | (st == PSEUDO)
        sup = rows[st == PSEUDO]
        self.superseded[sup] = True
        r = rows[take]
        self.state[r] = DELAYED
        self.label[r] = labels[take]
        self.acquired[r] = day
        return sup

    def counts(self):
        return {STATE_NAMES[s]: int(np.sum(self.state == s)) for s in STATE_NAMES}


class Oracle:
    """Sole gateway to ground truth during a simulation.

    ``label`` answers investigator queries: one call per query unit
    (a transaction, or a whole card in the card pipeline), at most ``budget``
    calls per day. ``delayed`` and ``evaluation_truth`` serve the verification
    clock and the metrics. Every access is logged by channel.
    """

    def __init__(self, truth, budget):
        self._truth = np.asarray(truth, dtype=np.int8)
        self.budget = budget
        self.day = None
        self.calls_today = 0
        self.log = []  # (channel, day, rows)

    def start_day(self, day):
        self.day = day
        self.calls_today = 0

    def label(self, rows):
        if self.calls_today >= self.budget:
            raise BudgetExceededError(f"oracle budget of {self.budget} exceeded on day {self.day}")
        self.calls_today += 1
        rows = np.asarray(rows, dtype=np.int64)
        self.log.append(("query", self.day, rows))
        return self._truth[rows].copy()

    def delayed(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        self.log.append(("delayed", self.day, rows))
        return self._truth[rows].copy()

    def evaluation_truth(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        self.log.append(("metrics", self.day, rows))
        return self._truth[rows].copy()

    def queried_rows(self):
        parts = [r for ch, _, r in self.log if ch == "query"]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def oracle_label(oracle, rows):
    """Functional alias of :meth:`Oracle.label`."""
    return oracle.label(rows)
