"""Query, pseudo-labeling, oversampling and card-scoring strategies.

Selection functions work on parallel arrays ``ids`` / ``scores`` (one entry
per pool item) and return arrays of ids. ``ids`` must be sortable; ties are
always broken by ascending id, so results never depend on pool order except
where a random draw is involved, and random draws take an explicit
``numpy.random.Generator``.
"""

import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from sklearn.neighbors import NearestNeighbors

from ._validation import check_rng, check_scores
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

__all__ = [
    "StrategySpec",
    "parse_strategy",
    "hrq_select",
    "explore_select",
    "sssl_pseudo_label",
    "srn_filter",
    "oversample",
    "OversampleResult",
    "combine_card_scores",
    "combine_grouped",
    "qfu_update",
    "qfu_select",
    "pca_outlierness",
    "split_counts",
]

EXPLORE_MODES = ("R", "P", "U", "M")
SSSL_MODES = ("SR", "SU", "SM", "SE")
OVERSAMPLE_MODES = ("ROS", "SMOTE")
COMBINERS = ("MF", "SM", "LF")


def split_counts(total, rho):
    """``(ceil(rho * total), rest)`` with float noise removed (0.7 * 10 -> 7)."""
    first = min(total, math.ceil(round(rho * total, 9)))
    return first, total - first


def _as_arrays(ids, scores):
    ids = np.asarray(ids)
    scores = check_scores(scores)
    if ids.shape != scores.shape:
        raise ValueError("ids and scores must have the same length")
    return ids, scores


def _ranked(ids, key, count):
    """Ids of the ``count`` smallest ``key`` values, ties by id ascending."""
    if count <= 0 or len(ids) == 0:
        return ids[:0]
    order = np.lexsort((ids, key))
    return ids[order[:count]]


def hrq_select(ids, scores, count):
    """Highest-risk querying: top ``count`` scores, descending."""
    ids, scores = _as_arrays(ids, scores)
    return _ranked(ids, -scores, count)


def _uncertain(ids, scores, count, center):
    return _ranked(ids, np.abs(scores - center), count)


def _random(ids, count, rng):
    count = min(count, len(ids))
    if count <= 0:
        return ids[:0]
    return ids[rng.choice(len(ids), size=count, replace=False)]


def _without(ids, scores, removed, extra=None):
    keep = ~np.isin(ids, removed)
    out = (ids[keep], scores[keep])
    if extra is not None:
        out += (extra[keep],)
    return out


def explore_select(mode, ids, scores, q, rng=None, rho=0.7, outlierness=None, center=0.5):
    """Pick ``q`` exploratory queries from a pool that excludes the exploit picks.

    Modes: ``R`` uniform random, ``U`` closest to ``center``, ``P`` highest
    ``outlierness`` (required for this mode), ``M`` ``ceil(rho*q)`` by ``U``
    then the rest by ``R`` among what is left.
    """
    ids, scores = _as_arrays(ids, scores)
    rng = check_rng(rng)
    q = min(q, len(ids))
    if mode == "R":
        return _random(ids, q, rng)
    if mode == "U":
        return _uncertain(ids, scores, q, center)
    if mode == "P":
        if outlierness is None:
            raise ValueError("mode P needs outlierness scores")
        return _ranked(ids, -check_scores(outlierness, "outlierness"), q)
    if mode == "M":
        nu, nr = split_counts(q, rho)
        first = _uncertain(ids, scores, nu, center)
        rest_ids, _ = _without(ids, scores, first)
        return np.concatenate([first, _random(rest_ids, nr, rng)])
    raise ConfigError(f"unknown exploration mode {mode!r}")


def sssl_pseudo_label(mode, ids, scores, m, rng=None, rho=0.7, center=0.5):
    """Ids to be recorded as genuine without investigation.

    ``SR`` random, ``SU`` most uncertain, ``SE`` lowest risk, ``SM``
    ``ceil(rho*m)`` uncertain plus the remainder at random.
    """
    ids, scores = _as_arrays(ids, scores)
    rng = check_rng(rng)
    m = min(m, len(ids))
    if mode == "SR":
        return _random(ids, m, rng)
    if mode == "SU":
        return _uncertain(ids, scores, m, center)
    if mode == "SE":
        return _ranked(ids, scores, m)
    if mode == "SM":
        nu, nr = split_counts(m, rho)
        first = _uncertain(ids, scores, nu, center)
        rest_ids, _ = _without(ids, scores, first)
        return np.concatenate([first, _random(rest_ids, nr, rng)])
    raise ConfigError(f"unknown SSSL mode {mode!r}")


def srn_filter(negatives, p, rng=None):
    """Keep ``ceil(p * len(negatives))`` investigator-labeled genuines at random."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    negatives = np.asarray(negatives)
    if p == 1.0:
        return negatives
    keep, _ = split_counts(len(negatives), p)
    rng = check_rng(rng)
    idx = np.sort(rng.choice(len(negatives), size=keep, replace=False))
    return negatives[idx]


class OversampleResult(NamedTuple):
    X: np.ndarray
    seed_index: np.ndarray  # row of the source sample each new point derives from
    neighbor_index: np.ndarray  # SMOTE partner row (== seed_index for ROS)
    gap: np.ndarray  # SMOTE interpolation factor u (0 for ROS)


def oversample(mode, X_target, extra_count, k_neighbors=5, rng=None):
    """Synthesise ``extra_count`` samples of one class.

    ``ROS`` duplicates random rows. ``SMOTE`` picks a random row ``x``, one of
    its ``k_neighbors`` nearest same-class rows ``x_nn`` (Euclidean) and
    returns ``x + u * (x_nn - x)`` with ``u ~ U[0, 1]``. SMOTE on a single
    row falls back to ROS.
    """
    X_target = np.asarray(X_target, dtype=np.float64)
    if X_target.ndim != 2 or len(X_target) == 0:
        raise ValueError("target class needs at least one sample")
    rng = check_rng(rng)
    if mode not in OVERSAMPLE_MODES:
        raise ConfigError(f"unknown oversampling mode {mode!r}")
    if extra_count <= 0:
        empty = np.empty(0, dtype=np.int64)
        return OversampleResult(np.empty((0, X_target.shape[1])), empty, empty, np.empty(0))
    if mode == "SMOTE" and len(X_target) < 2:
        logger.warning("SMOTE needs >= 2 samples; falling back to random oversampling")
        mode = "ROS"
    seeds = rng.integers(0, len(X_target), size=extra_count)
    if mode == "ROS":
        return OversampleResult(X_target[seeds].copy(), seeds, seeds.copy(), np.zeros(extra_count))

    k = min(k_neighbors, len(X_target) - 1)
    uniq, inv = np.unique(seeds, return_inverse=True)
    nn = NearestNeighbors(n_neighbors=k + 1).fit(X_target)
    _, neigh = nn.kneighbors(X_target[uniq])
    # drop the query point itself; with duplicate rows it may not come first
    neigh_wo = np.empty((len(uniq), k), dtype=np.int64)
    for r, (u, row) in enumerate(zip(uniq, neigh)):
        row = row[row != u]
        neigh_wo[r] = row[:k]
    pick = rng.integers(0, k, size=extra_count)
    partners = neigh_wo[inv, pick]
    gap = rng.random(extra_count)
    X = X_target[seeds] + gap[:, None] * (X_target[partners] - X_target[seeds])
    return OversampleResult(X, seeds, partners, gap)


# ---------------------------------------------------------------------------
# card-level scoring
# ---------------------------------------------------------------------------

def _combine_one(p, how, alpha, eps):
    if p.size == 0:
        raise ValueError("card bag must not be empty")
    if how == "MF":
        return float(p.max())
    if how == "SM":
        e = np.exp(alpha * (p - p.max()))
        return float(np.dot(p, e) / e.sum())
    if how == "LF":
        s = np.where(p > 0.5, p - eps, eps)
        return float(np.sum(-1.0 / np.log10(s)))
    raise ConfigError(f"unknown combining function {how!r}")


def combine_card_scores(bags, how="MF", alpha=1.0, eps=1e-3):
    """Card score per bag of transaction scores.

    ``MF`` max; ``SM`` softmax-weighted mean with sharpness ``alpha``;
    ``LF`` ``sum(-1 / log10(s_i))`` where ``s_i = p_i - eps`` for
    ``p_i > 0.5`` and ``eps`` otherwise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    return np.array([_combine_one(np.asarray(b, dtype=np.float64), how, alpha, eps) for b in bags])


def combine_grouped(scores, groups, how="MF", alpha=1.0, eps=1e-3):
    """Vectorised :func:`combine_card_scores` for flat ``(scores, group code)`` pairs.

    Returns ``(unique_groups, card_scores)`` with groups ascending.
    """
    scores = check_scores(scores)
    groups = np.asarray(groups)
    uniq, inv = np.unique(groups, return_inverse=True)
    g = len(uniq)
    mx = np.full(g, -np.inf)
    np.maximum.at(mx, inv, scores)
    if how == "MF":
        return uniq, mx
    if how == "SM":
        e = np.exp(alpha * (scores - mx[inv]))
        return uniq, np.bincount(inv, scores * e, g) / np.bincount(inv, e, g)
    if how == "LF":
        if eps <= 0:
            raise ValueError("eps must be positive")
        s = np.where(scores > 0.5, scores - eps, eps)
        return uniq, np.bincount(inv, -1.0 / np.log10(s), g)
    raise ConfigError(f"unknown combining function {how!r}")


def qfu_update(counters, card_ids, scores, v=0.05, center=0.5):
    """Add to each card the number of its scores inside ``[center - v, center + v]``."""
    if not 0 < v < 0.5:
        raise ValueError("v must lie in (0, 0.5)")
    scores = check_scores(scores)
    out = Counter(counters)
    hit = (scores >= center - v) & (scores <= center + v)
    for c in np.asarray(card_ids)[hit].tolist():
        out[c] += 1
    return out


def qfu_select(counters, k, cards=None):
    """The ``k`` cards with the highest counters, ties by card id ascending.

    ``cards`` lists the candidate cards (zero counters included); it defaults
    to the counter keys.
    """
    pool = sorted(counters) if cards is None else sorted(set(cards))
    ranked = sorted(pool, key=lambda c: (-counters.get(c, 0), c))
    return ranked[:max(k, 0)]


def pca_outlierness(pca, X, variance=0.9):
    """Squared reconstruction residual outside the components covering ``variance``."""
    Z = pca.standardize(X)
    ratio = np.cumsum(pca.explained_variance_) / pca.explained_variance_.sum()
    r = int(np.searchsorted(ratio, variance - 1e-12)) + 1
    C = pca.components_[:r]
    resid = Z - (Z @ C.T) @ C
    return np.einsum("ij,ij->i", resid, resid)


# ---------------------------------------------------------------------------
# strategy identifiers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategySpec:
    """A strategy identifier and its hyperparameters.

    ``explore`` is one of ``R/P/U/M`` or None, ``sssl`` one of ``SR/SU/SM/SE``
    or None, ``oversampler`` ``ROS``/``SMOTE`` or None. ``retain_negatives``
    is the SRN fraction ``p`` (1.0 = keep all feedback genuines). ``combiner``
    applies to the card pipeline only.
    """

    name: str
    k: int = 100
    q: int = 0
    m: int = 0
    explore: Optional[str] = None
    sssl: Optional[str] = None
    oversampler: Optional[str] = None
    qfu: bool = False
    retain_negatives: float = 1.0
    combiner: str = "MF"
    rho: float = 0.7
    v: float = 0.05
    alpha: float = 1.0
    eps: float = 1e-3
    k_neighbors: int = 5
    center: float = 0.5

    def __post_init__(self):
        if self.k < 0 or not 0 <= self.q <= self.k:
            raise ConfigError(f"{self.name}: need 0 <= q <= k")
        if self.m < 0:
            raise ConfigError(f"{self.name}: m must be >= 0")
        if not 0.0 <= self.retain_negatives <= 1.0:
            raise ConfigError(f"{self.name}: p must lie in [0, 1]")
        if not 0 < self.v < 0.5:
            raise ConfigError(f"{self.name}: v must lie in (0, 0.5)")
        if self.eps <= 0:
            raise ConfigError(f"{self.name}: eps must be positive")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"{self.name}: rho must lie in [0, 1]")
        if self.combiner not in COMBINERS:
            raise ConfigError(f"{self.name}: unknown combining function {self.combiner!r}")

    @property
    def exploit_budget(self):
        return self.k - self.q


_SRN = re.compile(r"^SRN\[(\d+(?:\.\d+)?)\]$")


def parse_strategy(ident, k=100, q=5, m=1000, **params):
    """Build a :class:`StrategySpec` from a mnemonic such as ``SR-U`` or ``LF-SR``.

    ``k``, ``q`` and ``m`` are the experiment budgets; each strategy keeps the
    ones it uses and zeroes the rest (HRQ runs with ``q = m = 0``).
    """
    ident = ident.strip()
    base, combiner = ident, params.pop("combiner", "MF")
    head, sep, tail = ident.partition("-")
    if sep and head in COMBINERS and tail:
        base, combiner = tail, head
    common = dict(name=ident, k=k, combiner=combiner, **params)

    if base == "HRQ":
        return StrategySpec(**common)
    if base.startswith("EAL-") and base[4:] in EXPLORE_MODES:
        return StrategySpec(q=q, explore=base[4:], **common)
    if base in SSSL_MODES:
        return StrategySpec(m=m, sssl=base, **common)
    if base in ("SR-U", "SR-R", "SR-M"):
        return StrategySpec(q=q, m=m, explore=base[3], sssl="SR", **common)
    mt = _SRN.match(base)
    if mt:
        return StrategySpec(m=m, sssl="SR", retain_negatives=float(mt.group(1)) / 100.0, **common)
    if base in OVERSAMPLE_MODES:
        return StrategySpec(m=m, oversampler=base, **common)
    if base == "QFU":
        return StrategySpec(qfu=True, **common)
    raise ConfigError(f"unknown strategy id {ident!r}")

