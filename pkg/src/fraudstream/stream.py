"""Transaction data model, CSV ingestion/export and the synthetic stream generator.

A :class:`Dataset` is stored column-wise (numpy arrays sorted by ``(day, seq)``)
so the simulation harness can slice whole days without per-row objects.
:class:`Transaction` objects are only materialised by :func:`day_batch`.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from .exceptions import ConfigError, DatasetParseError

__all__ = [
    "Transaction",
    "Dataset",
    "GenConfig",
    "load_dataset",
    "export_dataset",
    "generate_stream",
    "day_batch",
    "DEFAULT_N_FEATURES",
]

DEFAULT_N_FEATURES = 32
_FIXED_COLUMNS = ("day", "seq", "trx_id", "card_id", "amount")


@dataclass(frozen=True)
class Transaction:
    """One payment event. ``features[0]`` is the amount."""

    trx_id: str
    card_id: str
    day: int
    seq: int
    amount: float
    features: tuple

    def __post_init__(self):
        if self.amount < 0:
            raise ValueError(f"negative amount for {self.trx_id}")
        if self.features and self.features[0] != self.amount:
            raise ValueError(f"features[0] must equal amount for {self.trx_id}")


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable, day-ordered collection of transactions plus ground truth.

    Parameters
    ----------
    day, seq : int arrays
    trx_id, card_id : str arrays
    amount : float array
    X : (N, n) float array, ``X[:, 0] == amount``
    y : int array with 1 = fraud, 0 = genuine
    n_days : int, optional
        Defaults to ``max(day) + 1``.

    Rows are re-sorted by ``(day, seq)``. Ground truth ``y`` is kept on the
    object but the harness only reads it through its oracle and delayed-label
    clock.
    """

    def __init__(self, day, seq, trx_id, card_id, amount, X, y, n_days=None):
        day = np.asarray(day, dtype=np.int64)
        seq = np.asarray(seq, dtype=np.int64)
        order = np.lexsort((seq, day))
        self.day = _readonly(day[order])
        self.seq = _readonly(seq[order])
        self.trx_id = _readonly(np.asarray(trx_id, dtype=str)[order])
        self.card_id = _readonly(np.asarray(card_id, dtype=str)[order])
        self.amount = _readonly(np.asarray(amount, dtype=np.float64)[order])
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != len(day):
            raise ValueError("X must be a 2-D array with one row per transaction")
        self.X = _readonly(X[order])
        self.y = _readonly(np.asarray(y, dtype=np.int8)[order])
        self.n_features = X.shape[1]
        self.n_days = int(n_days if n_days is not None else (self.day.max() + 1 if len(day) else 0))
        self._validate()

        bounds = np.searchsorted(self.day, np.arange(self.n_days + 1))
        self._day_bounds = bounds
        # card codes follow lexicographic card_id order, so code order == id order
        cards, codes = np.unique(self.card_id, return_inverse=True)
        self.cards = _readonly(cards)
        self.card_code = _readonly(codes.astype(np.int64))
        # rank of trx_id among all ids; used for "trx_id ascending" tie-breaks
        self.trx_rank = _readonly(np.argsort(np.argsort(self.trx_id, kind="stable"), kind="stable"))
        order_c = np.argsort(codes, kind="stable")
        cb = np.searchsorted(codes[order_c], np.arange(len(cards) + 1))
        self._card_rows = order_c
        self._card_bounds = cb

    def _validate(self):
        if np.any(self.amount < 0):
            raise ValueError("negative amount")
        if len(self.amount) and not np.array_equal(self.X[:, 0], self.amount):
            raise ValueError("feature 0 must equal amount")
        if len(np.unique(self.trx_id)) != len(self.trx_id):
            raise ValueError("duplicate trx_id")
        keys = self.day * (int(self.seq.max()) + 1 if len(self.seq) else 1) + self.seq
        if len(np.unique(keys)) != len(keys):
            raise ValueError("(day, seq) pairs must be unique")
        if len(self.day) and (self.day.min() < 0 or self.day.max() >= self.n_days):
            raise ValueError("day index out of range")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.day)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.n_days == other.n_days and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("day", "seq", "trx_id", "card_id", "amount", "X", "y")
        )

    __hash__ = None

    def day_rows(self, day):
        """Row indices of ``day`` as a slice-backed range array."""
        if not 0 <= day < self.n_days:
            raise IndexError(f"day {day} outside [0, {self.n_days})")
        return np.arange(self._day_bounds[day], self._day_bounds[day + 1])

    def day_sizes(self):
        return np.diff(self._day_bounds)

    def card_rows(self, card):
        """Row indices of one card, given its id string or integer code."""
        if isinstance(card, (str, np.str_)):
            code = int(np.searchsorted(self.cards, card))
            if code >= len(self.cards) or self.cards[code] != card:
                raise KeyError(card)
        else:
            code = int(card)
        return self._card_rows[self._card_bounds[code]:self._card_bounds[code + 1]]

    @property
    def card_index(self):
        """Mapping card_id -> list of trx_ids."""
        return {c: self.trx_id[self.card_rows(i)].tolist() for i, c in enumerate(self.cards)}

    def ground_truth(self):
        """Mapping trx_id -> label (1 fraud, 0 genuine)."""
        return dict(zip(self.trx_id.tolist(), self.y.tolist()))

    def transaction(self, row):
        return Transaction(
            trx_id=str(self.trx_id[row]),
            card_id=str(self.card_id[row]),
            day=int(self.day[row]),
            seq=int(self.seq[row]),
            amount=float(self.amount[row]),
            features=tuple(self.X[row].tolist()),
        )

    def digest(self):
        """SHA-256 over all columns; equal datasets have equal digests."""
        h = hashlib.sha256()
        for a in (self.day, self.seq, self.amount, self.X, self.y):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update("\x00".join(self.trx_id.tolist()).encode())
        h.update("\x00".join(self.card_id.tolist()).encode())
        return h.hexdigest()


def day_batch(ds, day):
    """Transactions of ``day`` in ``seq`` order."""
    return [ds.transaction(r) for r in ds.day_rows(day)]


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def _header(n):
    return list(_FIXED_COLUMNS) + [f"f{i}" for i in range(1, n)] + ["label"]


def export_dataset(ds, path):
    """Write ``ds`` as UTF-8 CSV with LF endings.

    Floats are written with ``repr`` (shortest round-tripping form) so
    ``load_dataset(export_dataset(ds))`` is exact.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(ds.n_features))
        X = ds.X.tolist()
        for i in range(len(ds)):
            w.writerow(
                [int(ds.day[i]), int(ds.seq[i]), ds.trx_id[i], ds.card_id[i], repr(X[i][0])]
                + [repr(v) for v in X[i][1:]]
                + [int(ds.y[i])]
            )


def load_dataset(path, schema=None):
    """Parse a dataset CSV.

    ``schema`` optionally pins the feature count as ``{"n_features": n}``;
    otherwise ``n`` is inferred from the header.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetParseError("empty file") from None
        if len(header) < len(_FIXED_COLUMNS) + 1 or header[-1] != "label":
            raise DatasetParseError("header must end with 'label'", row=0, column="label")
        n = len(header) - len(_FIXED_COLUMNS)
        if schema is not None and "n_features" in schema and schema["n_features"] != n:
            raise DatasetParseError(f"expected {schema['n_features']} features, header has {n}", row=0)
        expected = _header(n)
        for got, want in zip(header, expected):
            if got != want:
                raise DatasetParseError(f"missing column {want!r} (found {got!r})", row=0, column=want)

        days, seqs, tids, cids, X, y = [], [], [], [], [], []
        seen = set()
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(expected):
                raise DatasetParseError(f"expected {len(expected)} fields, got {len(row)}", row=r)
            try:
                d = int(row[0])
            except ValueError:
                raise DatasetParseError("non-integer day", row=r, column="day") from None
            try:
                s = int(row[1])
            except ValueError:
                raise DatasetParseError("non-integer seq", row=r, column="seq") from None
            if d < 0:
                raise DatasetParseError("negative day", row=r, column="day")
            tid = row[2]
            if tid in seen:
                raise DatasetParseError("duplicate trx_id", row=r, column="trx_id")
            seen.add(tid)
            feats = []
            for j in range(n):
                col = expected[4 + j]
                try:
                    v = float(row[4 + j])
                except ValueError:
                    raise DatasetParseError("non-numeric feature", row=r, column=col) from None
                if not math.isfinite(v):
                    raise DatasetParseError("non-finite feature", row=r, column=col)
                feats.append(v)
            if feats[0] < 0:
                raise DatasetParseError("negative amount", row=r, column="amount")
            lab = row[-1]
            if lab not in ("0", "1"):
                raise DatasetParseError("label must be 0 or 1", row=r, column="label")
            days.append(d)
            seqs.append(s)
            tids.append(tid)
            cids.append(row[3])
            X.append(feats)
            y.append(int(lab))
    if not days:
        raise DatasetParseError("no data rows")
    X = np.array(X, dtype=np.float64).reshape(len(days), n)
    try:
        return Dataset(days, seqs, tids, cids, X[:, 0], X, y)
    except ValueError as exc:
        raise DatasetParseError(str(exc)) from None


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class GenConfig:
    """Parameters of the synthetic transaction stream.

    Classes are Gaussian mixtures in latent feature space. Fraud components
    sit at an offset from randomly chosen genuine components and have a wider
    spread, so the classes only partially overlap. ``fraud_rate`` is realised
    exactly (rounded to the nearest transaction count).
    """

    days: int = 60
    transactions_per_day: int = 20000
    fraud_rate: float = 0.002
    n_features: int = DEFAULT_N_FEATURES
    genuine_components: int = 6
    fraud_components: int = 3
    component_spread: float = 2.5
    genuine_scale: float = 1.0
    fraud_scale: float = 1.6
    fraud_offset: float = 2.5
    fraud_card_rate: float = 0.005
    transactions_per_card: float = 5.0
    drift_day: Optional[int] = None
    drift_magnitude: float = 0.0
    amount_log_mean: float = 3.5
    amount_log_scale: float = 0.6
    seed: int = 0

    def validate(self):
        if self.days < 1:
            raise ConfigError("days must be >= 1")
        if self.transactions_per_day < 1:
            raise ConfigError("transactions_per_day must be >= 1")
        if not 0 < self.fraud_rate < 0.5:
            raise ConfigError("fraud_rate must lie in (0, 0.5)")
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if self.genuine_components < 1 or self.fraud_components < 1:
            raise ConfigError("component counts must be >= 1")
        if not 0 < self.fraud_card_rate <= 1:
            raise ConfigError("fraud_card_rate must lie in (0, 1]")
        if self.transactions_per_card < 1:
            raise ConfigError("transactions_per_card must be >= 1")
        for name in ("genuine_scale", "fraud_scale", "amount_log_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(f"degenerate covariance: {name} must be positive, got {v}")
        if self.component_spread < 0 or self.fraud_offset < 0:
            raise ConfigError("component_spread and fraud_offset must be >= 0")
        if self.drift_day is not None and self.drift_day < 0:
            raise ConfigError("drift_day must be >= 0")
        return self

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _mixture_params(cfg, rng):
    n = cfg.n_features
    kg, kf = cfg.genuine_components, cfg.fraud_components
    g_mean = rng.normal(0.0, cfg.component_spread, size=(kg, n))
    g_w = 0.6 ** np.arange(kg)
    g_w = g_w / g_w.sum()
    g_std = cfg.genuine_scale * rng.uniform(0.5, 1.5, size=(kg, n))
    base = rng.integers(0, kg, size=kf)
    direction = rng.normal(size=(kf, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    f_mean = g_mean[base] + cfg.fraud_offset * direction
    f_std = cfg.fraud_scale * g_std[base]
    f_w = rng.dirichlet(np.full(kf, 4.0))
    drift_dir = rng.normal(size=n)
    drift_dir /= np.linalg.norm(drift_dir)
    return g_mean, g_std, g_w, f_mean, f_std, f_w, drift_dir


def _sample_cards(total, mean, rng):
    """Card code per transaction slot; card sizes are 1 + geometric."""
    p = 1.0 / mean
    sizes = []
    got = 0
    while got < total:
        s = rng.geometric(p, size=max(16, int((total - got) / mean) + 16))
        sizes.append(s)
        got += int(s.sum())
    sizes = np.concatenate(sizes)
    cum = np.cumsum(sizes)
    k = int(np.searchsorted(cum, total)) + 1
    sizes = sizes[:k].copy()
    sizes[-1] -= int(cum[k - 1] - total)
    return np.repeat(np.arange(k), sizes)


def generate_stream(cfg):
    """Build a seeded synthetic :class:`Dataset` from ``cfg``.

    Draw order is fixed (mixture parameters, card structure, labels, features),
    so the same config always yields a bit-identical dataset, and the drift
    direction is drawn even when the magnitude is zero.
    """
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    r_par, r_card, r_lab, r_feat = (np.random.default_rng(s) for s in ss.spawn(4))
    g_mean, g_std, g_w, f_mean, f_std, f_w, drift_dir = _mixture_params(cfg, r_par)

    total = cfg.days * cfg.transactions_per_day
    n_fraud = max(1, int(round(cfg.fraud_rate * total)))

    card_of_slot = _sample_cards(total, cfg.transactions_per_card, r_card)
    r_card.shuffle(card_of_slot)
    n_cards = int(card_of_slot.max()) + 1
    day = np.repeat(np.arange(cfg.days), cfg.transactions_per_day)
    seq = np.tile(np.arange(cfg.transactions_per_day), cfg.days)

    # fraud cards: Bernoulli(fraud_card_rate), then topped up / trimmed until
    # every fraud card can hold >= 1 fraud and the total fraud count fits
    card_size = np.bincount(card_of_slot, minlength=n_cards)
    is_fcard = r_lab.random(n_cards) < cfg.fraud_card_rate
    perm = r_lab.permutation(n_cards)
    fcards = [c for c in perm if is_fcard[c]]
    others = [c for c in perm if not is_fcard[c]]
    if len(fcards) > n_fraud:
        fcards = fcards[:n_fraud]
    while sum(card_size[c] for c in fcards) < n_fraud:
        fcards.append(others.pop())
    fcards = np.sort(np.array(fcards, dtype=np.int64))
    y = np.zeros(total, dtype=np.int8)
    slots_by_card = {int(c): [] for c in fcards}
    for s in np.flatnonzero(np.isin(card_of_slot, fcards)):
        slots_by_card[int(card_of_slot[s])].append(s)
    first = []
    rest = []
    for c in fcards:
        s = slots_by_card[int(c)]
        pick = int(r_lab.integers(len(s)))
        first.append(s[pick])
        rest.extend(s[:pick] + s[pick + 1:])
    y[first] = 1
    extra = n_fraud - len(first)
    if extra > 0:
        y[r_lab.choice(np.array(rest, dtype=np.int64), size=extra, replace=False)] = 1

    # latent features: genuine rows first, then fraud rows, each in slot order
    n = cfg.n_features
    Z = np.empty((total, n))
    g_rows = np.flatnonzero(y == 0)
    f_rows = np.flatnonzero(y == 1)
    comp = r_feat.choice(len(g_w), size=len(g_rows), p=g_w)
    Z[g_rows] = g_mean[comp] + g_std[comp] * r_feat.standard_normal((len(g_rows), n))
    comp = r_feat.choice(len(f_w), size=len(f_rows), p=f_w)
    Z[f_rows] = f_mean[comp] + f_std[comp] * r_feat.standard_normal((len(f_rows), n))
    if cfg.drift_day is not None and cfg.drift_magnitude != 0.0:
        shifted = f_rows[day[f_rows] >= cfg.drift_day]
        Z[shifted] += cfg.drift_magnitude * drift_dir

    z0 = Z[:, 0] / cfg.component_spread if cfg.component_spread > 0 else Z[:, 0]
    amount = np.round(np.exp(cfg.amount_log_mean + cfg.amount_log_scale * z0), 2)
    Z[:, 0] = amount

    width = max(7, len(str(n_cards)))
    trx_id = np.char.add("T", np.char.zfill(np.arange(total).astype(str), max(9, len(str(total)))))
    card_id = np.char.add("C", np.char.zfill(card_of_slot.astype(str), width))
    return Dataset(day, seq, trx_id, card_id, amount, Z, y, n_days=cfg.days)
