"""Probabilistic binary classifiers used by the fraud detection loop.

* :class:`DecisionTree` -- CART with Gini impurity, midpoint thresholds and
  raw class-fraction leaves.
* :class:`BalancedForest` -- bagged trees, each grown on a bootstrap in which
  the majority class is undersampled to the minority count.
* :class:`WeightedEnsemble` -- ``w * P_delayed + (1 - w) * P_feedback``.

All three follow the scikit-learn estimator protocol (``fit``,
``predict_proba``, ``get_params``) and additionally expose
``score_samples(X)`` returning the fraud probability directly.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_labels
from .exceptions import DimensionError, TrainingError

__all__ = [
    "LabeledSample",
    "DecisionTree",
    "BalancedForest",
    "WeightedEnsemble",
    "samples_to_arrays",
    "train_tree",
    "train_balanced_forest",
    "score",
    "ensemble_score",
    "dump_model",
    "load_model",
]

MODEL_FORMAT = "fraudstream-model/1"
_LEAF = -1


@dataclass(frozen=True)
class LabeledSample:
    features: tuple
    label: int  # 1 fraud, 0 genuine
    weight: float = 1.0


def samples_to_arrays(samples):
    """Split a list of :class:`LabeledSample` into ``(X, y, w)``."""
    if not samples:
        raise TrainingError("empty sample set")
    X = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    w = np.array([s.weight for s in samples], dtype=np.float64)
    if np.any(w <= 0):
        raise TrainingError("sample weights must be positive")
    return X, y, w


def _resolve_max_features(max_features, n):
    if max_features is None or max_features == "sqrt":
        return max(1, math.ceil(math.sqrt(n)))
    if max_features == "all":
        return n
    mf = int(max_features)
    if not 1 <= mf <= n:
        raise ValueError(f"max_features must lie in [1, {n}], got {mf}")
    return mf


def _best_split(Xn, yn, wn, feats, min_leaf):
    """Exhaustive Gini search over ``feats``.

    Returns ``(feature, threshold)`` or ``None``. Equal impurities are broken
    by lowest feature index, then lowest threshold.
    """
    s = Xn.shape[0]
    if s < 2 * min_leaf:
        return None
    V = Xn[:, feats]
    # tie order is irrelevant: equal values are never split apart
    order = np.argsort(V, axis=0)
    V = np.take_along_axis(V, order, axis=0)
    w = wn[order]
    wp = w * yn[order]
    cwf = np.cumsum(w, axis=0)
    cpf = np.cumsum(wp, axis=0)
    W, P = cwf[-1], cpf[-1]
    cw, cp = cwf[:-1], cpf[:-1]
    WR = W - cw
    PR = P - cp
    with np.errstate(divide="ignore", invalid="ignore"):
        g = (cw - (cp ** 2 + (cw - cp) ** 2) / cw) + (WR - (PR ** 2 + (WR - PR) ** 2) / WR)
    valid = V[:-1] < V[1:]
    left_n = np.arange(1, s)[:, None]
    valid &= (left_n >= min_leaf) & (s - left_n >= min_leaf)
    g = np.where(valid, g, np.inf)
    gmin = g.min()
    if not np.isfinite(gmin):
        return None
    tol = 1e-12 * max(1.0, float(W[0]))
    cand = g <= gmin + tol
    cols = np.flatnonzero(cand.any(axis=0))
    # feats is sorted ascending, so the first candidate column has the lowest index
    j = cols[0]
    i = int(np.argmax(cand[:, j]))
    lo, hi = V[i, j], V[i + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return int(feats[j]), float(thr)


class DecisionTree(ClassifierMixin, BaseEstimator):
    """CART classifier with Gini impurity.

    Parameters
    ----------
    max_depth : int, default=12
    min_leaf_size : int, default=5
        Minimum (unweighted) sample count in each child of a split.
    max_features : int, "sqrt" or "all", default="sqrt"
        Candidate features drawn without replacement at every split;
        "sqrt" means ``ceil(sqrt(n_features))``.
    smoothing : float, default=0.0
        Leaf score is ``(w_pos + smoothing) / (w_total + 2 * smoothing)``;
        0 gives the raw class fraction.
    random_state : int, Generator or None
    """

    def __init__(self, max_depth=12, min_leaf_size=5, max_features="sqrt",
                 smoothing=0.0, random_state=None):
        self.max_depth = max_depth
        self.min_leaf_size = min_leaf_size
        self.max_features = max_features
        self.smoothing = smoothing
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        X, y = check_features(X), check_labels(y)
        if X.shape[0] == 0:
            raise TrainingError("empty sample set")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different lengths")
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        if np.any(w <= 0):
            raise TrainingError("sample weights must be positive")
        rng = np.random.default_rng(self.random_state)
        n = X.shape[1]
        mf = _resolve_max_features(self.max_features, n)
        yf = y.astype(np.float64)

        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            wi = w[idx]
            pos = float(np.dot(wi, yf[idx]))
            tot = float(wi.sum())
            feature.append(_LEAF)
            threshold.append(0.0)
            left.append(_LEAF)
            right.append(_LEAF)
            value.append((pos + self.smoothing) / (tot + 2 * self.smoothing))
            return len(value) - 1, pos, tot

        root, pos, tot = new_node(np.arange(len(y)))
        stack = [(root, np.arange(len(y)), 0, pos, tot)]
        while stack:
            node, idx, depth, pos, tot = stack.pop()
            if depth >= self.max_depth or pos <= 0.0 or pos >= tot:
                continue
            feats = np.sort(rng.choice(n, size=mf, replace=False)) if mf < n else np.arange(n)
            split = _best_split(X[idx], yf[idx], w[idx], feats, self.min_leaf_size)
            if split is None:
                continue
            f, t = split
            go_left = X[idx, f] <= t
            li, ri = idx[go_left], idx[~go_left]
            ln, lpos, ltot = new_node(li)
            rn, rpos, rtot = new_node(ri)
            feature[node], threshold[node], left[node], right[node] = f, t, ln, rn
            # push right first so the left subtree is expanded first
            stack.append((rn, ri, depth + 1, rpos, rtot))
            stack.append((ln, li, depth + 1, lpos, ltot))

        self.feature_ = np.array(feature, dtype=np.int64)
        self.threshold_ = np.array(threshold, dtype=np.float64)
        self.left_ = np.array(left, dtype=np.int64)
        self.right_ = np.array(right, dtype=np.int64)
        self.value_ = np.array(value, dtype=np.float64)
        self.n_features_in_ = n
        self.classes_ = np.array([0, 1])
        return self

    def apply(self, X):
        """Leaf index reached by every row."""
        check_is_fitted(self, "value_")
        X = check_features(X, self.n_features_in_)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature_[node] != _LEAF)
        while active.size:
            nd = node[active]
            go_left = X[active, self.feature_[nd]] <= self.threshold_[nd]
            node[active] = np.where(go_left, self.left_[nd], self.right_[nd])
            active = active[self.feature_[node[active]] != _LEAF]
        return node

    def score_samples(self, X):
        return self.value_[self.apply(X)]

    def predict_proba(self, X):
        p = self.score_samples(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.score_samples(X) > 0.5).astype(np.int64)

    @property
    def n_nodes(self):
        return len(self.value_)

    def _to_dict(self):
        check_is_fitted(self, "value_")
        return {
            "kind": "tree",
            "params": self.get_params(),
            "n_features": int(self.n_features_in_),
            "feature": self.feature_.tolist(),
            "threshold": self.threshold_.tolist(),
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "value": self.value_.tolist(),
        }

    @classmethod
    def _from_dict(cls, d):
        params = {k: v for k, v in d["params"].items() if k != "random_state"}
        tree = cls(**params)
        tree.feature_ = np.array(d["feature"], dtype=np.int64)
        tree.threshold_ = np.array(d["threshold"], dtype=np.float64)
        tree.left_ = np.array(d["left"], dtype=np.int64)
        tree.right_ = np.array(d["right"], dtype=np.int64)
        tree.value_ = np.array(d["value"], dtype=np.float64)
        tree.n_features_in_ = d["n_features"]
        tree.classes_ = np.array([0, 1])
        return tree


def _tree_seed(seed, index):
    return np.random.SeedSequence([0 if seed is None else seed, index])


def _balanced_indices(y, rng, bootstrap):
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    n_min = min(len(pos), len(neg))
    if bootstrap:
        p = rng.choice(pos, size=n_min, replace=True)
        g = rng.choice(neg, size=n_min, replace=True)
    else:
        p = pos if len(pos) == n_min else rng.choice(pos, size=n_min, replace=False)
        g = neg if len(neg) == n_min else rng.choice(neg, size=n_min, replace=False)
    return np.concatenate([g, p])


def _fit_one(X, y, w, index, params):
    rng = np.random.default_rng(_tree_seed(params["random_state"], index))
    if params["balanced"]:
        idx = _balanced_indices(y, rng, params["bootstrap"])
    elif params["bootstrap"]:
        idx = rng.integers(0, len(y), size=len(y))
    else:
        idx = np.arange(len(y))
    tree = DecisionTree(
        max_depth=params["max_depth"],
        min_leaf_size=params["min_leaf_size"],
        max_features=params["max_features"],
        smoothing=params["smoothing"],
        random_state=rng,
    )
    tree.fit(X[idx], y[idx], None if w is None else w[idx])
    tree.random_state = None
    yb = y[idx]
    return tree, (int((yb == 0).sum()), int((yb == 1).sum()))


class BalancedForest(ClassifierMixin, BaseEstimator):
    """Ensemble of balanced random trees.

    Each tree sees a bootstrap where both classes have the minority-class
    count; the forest score is the mean of the tree scores. Tree ``i`` draws
    from ``SeedSequence([random_state, i])`` so results do not depend on
    ``n_jobs``.

    Parameters
    ----------
    n_trees : int, default=50
    max_depth, min_leaf_size, max_features, smoothing
        Passed to every :class:`DecisionTree`.
    balanced : bool, default=True
        Undersample the majority class per tree. ``False`` gives a plain
        random forest.
    bootstrap : bool, default=True
    random_state : int or None
    n_jobs : int, default=1
    """

    def __init__(self, n_trees=50, max_depth=12, min_leaf_size=5, max_features="sqrt",
                 smoothing=0.0, balanced=True, bootstrap=True, random_state=None, n_jobs=1):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf_size = min_leaf_size
        self.max_features = max_features
        self.smoothing = smoothing
        self.balanced = balanced
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y, sample_weight=None):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        X, y = check_features(X), check_labels(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different lengths")
        for cls, name in ((1, "fraud"), (0, "genuine")):
            if not np.any(y == cls):
                raise TrainingError(f"missing class: no {name} samples")
        w = None if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        params = self.get_params()
        if self.n_jobs == 1:
            out = [_fit_one(X, y, w, i, params) for i in range(self.n_trees)]
        else:
            out = Parallel(n_jobs=self.n_jobs, prefer="threads")(
                delayed(_fit_one)(X, y, w, i, params) for i in range(self.n_trees)
            )
        self.estimators_ = [t for t, _ in out]
        self.bootstrap_counts_ = np.array([c for _, c in out], dtype=np.int64)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def tree_scores(self, X):
        """``(n_trees, n_samples)`` matrix of per-tree fraud scores."""
        check_is_fitted(self, "estimators_")
        X = check_features(X, self.n_features_in_)
        return np.vstack([t.score_samples(X) for t in self.estimators_])

    def score_samples(self, X):
        return self.tree_scores(X).mean(axis=0)

    def predict_proba(self, X):
        p = self.score_samples(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.score_samples(X) > 0.5).astype(np.int64)

    def _to_dict(self):
        check_is_fitted(self, "estimators_")
        return {
            "kind": "forest",
            "params": self.get_params(),
            "n_features": int(self.n_features_in_),
            "trees": [t._to_dict() for t in self.estimators_],
        }

    @classmethod
    def _from_dict(cls, d):
        forest = cls(**d["params"])
        forest.estimators_ = [DecisionTree._from_dict(t) for t in d["trees"]]
        forest.n_features_in_ = d["n_features"]
        forest.classes_ = np.array([0, 1])
        return forest


class WeightedEnsemble(ClassifierMixin, BaseEstimator):
    """Convex combination of a delayed and a feedback classifier.

    ``score = w_delayed * delayed(x) + (1 - w_delayed) * feedback(x)``.
    Both sub-models must already be fitted; ``fit`` is a no-op kept for
    estimator compatibility. When ``feedback`` is ``None`` (no investigator
    feedback yet) the delayed score is returned unchanged.
    """

    def __init__(self, delayed=None, feedback=None, w_delayed=0.5):
        self.delayed = delayed
        self.feedback = feedback
        self.w_delayed = w_delayed

    def fit(self, X=None, y=None):
        return self

    def _check(self):
        if not 0.0 <= self.w_delayed <= 1.0:
            raise ValueError("w_delayed must lie in [0, 1]")
        if self.delayed is None:
            raise NotFittedError("delayed model is missing")
        for m in (self.delayed, self.feedback):
            if m is not None:
                check_is_fitted(m)

    def score_samples(self, X):
        self._check()
        pd_ = self.delayed.score_samples(X)
        if self.feedback is None:
            return pd_
        return self.w_delayed * pd_ + (1.0 - self.w_delayed) * self.feedback.score_samples(X)

    def predict_proba(self, X):
        p = self.score_samples(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.score_samples(X) > 0.5).astype(np.int64)

    @property
    def n_features_in_(self):
        return self.delayed.n_features_in_


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------

def train_tree(samples, max_depth=12, min_leaf_size=5, max_features="sqrt", smoothing=0.0, seed=None):
    X, y, w = samples_to_arrays(samples)
    return DecisionTree(max_depth, min_leaf_size, max_features, smoothing, seed).fit(X, y, w)


def train_balanced_forest(samples, **forest_params):
    X, y, w = samples_to_arrays(samples)
    return BalancedForest(**forest_params).fit(X, y, w)


def score(model, x):
    """Fraud probability of a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("score expects a single feature vector")
    if isinstance(model, WeightedEnsemble):
        model._check()
    else:
        check_is_fitted(model)
    n = model.n_features_in_
    if x.shape[0] != n:
        raise DimensionError(f"expected {n} features, got {x.shape[0]}")
    return float(model.score_samples(x[None, :])[0])


def ensemble_score(ensemble, x):
    """Weighted delayed/feedback score of one vector; both sub-models must be fitted."""
    if ensemble.feedback is None:
        raise NotFittedError("feedback model is missing")
    return score(ensemble, x)


def dump_model(model, path):
    """Write a tree or forest as versioned JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"format": MODEL_FORMAT, "model": model._to_dict()}, fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {d.get('format')!r}")
    m = d["model"]
    if m["kind"] == "tree":
        return DecisionTree._from_dict(m)
    if m["kind"] == "forest":
        return BalancedForest._from_dict(m)
    raise ValueError(f"unknown model kind {m['kind']!r}")
