"""PCA projection, class-conditional density grids and plot exports.

Nothing here needs a plotting library: grids and overlays are written as
CSV and the figure as a small hand-written SVG (contour segments from
marching squares plus scatter markers).
"""

import csv
import logging
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_scores
from .exceptions import UndefinedMetricError

logger = logging.getLogger(__name__)

__all__ = [
    "PCAProjection",
    "fit_pca",
    "project",
    "DensityGrid",
    "density_grid",
    "export_overlay",
    "score_report",
    "pca_baseline_score",
    "contour_segments",
]


class PCAProjection(TransformerMixin, BaseEstimator):
    """PCA on standardised features via eigendecomposition of the covariance.

    Each component is sign-normalised so that its largest-magnitude entry is
    positive, which keeps plot orientations stable between runs. Constant
    features get unit scale (with a warning).

    Parameters
    ----------
    n_components : int or None, default=2
        Number of columns returned by ``transform``; ``None`` keeps all.
    """

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_features(X)
        n_samples, n = X.shape
        if n_samples < n + 1:
            raise ValueError(f"PCA needs at least {n + 1} samples, got {n_samples}")
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0, ddof=1)
        const = scale <= 1e-12 * np.maximum(1.0, np.abs(self.mean_))
        if const.any():
            logger.warning("constant feature(s) %s: using unit scale", np.flatnonzero(const).tolist())
            scale = np.where(const, 1.0, scale)
        self.scale_ = scale
        Z = (X - self.mean_) / self.scale_
        cov = Z.T @ Z / (n_samples - 1)
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(vals)[::-1]
        vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order].T
        lead = np.argmax(np.abs(vecs), axis=1)
        vecs *= np.sign(vecs[np.arange(n), lead])[:, None]
        self.components_ = vecs
        self.explained_variance_ = vals
        self.n_features_in_ = n
        return self

    def standardize(self, X):
        check_is_fitted(self, "components_")
        return (check_features(X, self.n_features_in_) - self.mean_) / self.scale_

    def transform(self, X):
        dims = self.n_features_in_ if self.n_components is None else self.n_components
        return project(self, X, dims)

    def inverse_standardized(self, P):
        """Map full-rank projections back to standardised feature space."""
        P = np.asarray(P, dtype=np.float64)
        return P @ self.components_[:P.shape[1]]


def fit_pca(X, n_components=2):
    return PCAProjection(n_components).fit(X)


def project(model, X, dims=2):
    """Coordinates of ``X`` on the first ``dims`` components."""
    check_is_fitted(model, "components_")
    if not 0 <= dims <= model.n_features_in_:
        raise IndexError(f"dims must lie in [0, {model.n_features_in_}]")
    return model.standardize(X) @ model.components_[:dims].T


def pca_baseline_score(model, X, mode="F"):
    """Passive outlier score: |projection| on the first (F) or last (L) component."""
    if mode not in ("F", "L"):
        raise ValueError("mode must be 'F' or 'L'")
    Z = model.standardize(X)
    c = model.components_[0 if mode == "F" else -1]
    return np.abs(Z @ c)


# ---------------------------------------------------------------------------
# density grids
# ---------------------------------------------------------------------------

@dataclass
class DensityGrid:
    x: np.ndarray  # cell-centre coordinates, shape (resolution,)
    y: np.ndarray
    density: dict  # class name -> (resolution, resolution) array indexed [iy, ix]
    bandwidth: dict  # class name -> (hx, hy)
    missing: tuple = ()  # classes with < 2 points

    @property
    def cell_area(self):
        return float((self.x[1] - self.x[0]) * (self.y[1] - self.y[0]))

    def mass(self, cls):
        return float(self.density[cls].sum() * self.cell_area)


def _silverman(P):
    n = len(P)
    return P.std(axis=0, ddof=1) * n ** (-1.0 / 6.0)


def density_grid(points, labels, resolution=100, bandwidth=None, bounds=None, margin=3.0):
    """Gaussian KDE of each class on a shared square grid.

    ``labels`` are 1 (fraud) / 0 (genuine). Bandwidth per axis follows the
    bivariate Silverman rule unless given. Grid values are renormalised so
    each class integrates to exactly 1 over the grid.
    """
    P = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("points must be (n, 2)")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    classes = {"fraud": P[labels == 1], "genuine": P[labels == 0]}
    present = {c: p for c, p in classes.items() if len(p) >= 2}
    missing = tuple(c for c in classes if c not in present)
    if not present:
        raise UndefinedMetricError("density grid needs >= 2 points of at least one class")
    bw = {}
    for c, p in present.items():
        h = np.asarray(bandwidth, dtype=np.float64) * np.ones(2) if bandwidth is not None else _silverman(p)
        bw[c] = np.where(h > 0, h, 1e-3)
    if bounds is None:
        hmax = np.max([bw[c] for c in present], axis=0)
        lo = P.min(axis=0) - margin * hmax
        hi = P.max(axis=0) + margin * hmax
    else:
        lo, hi = np.array(bounds[0], dtype=float), np.array(bounds[1], dtype=float)
    step = (hi - lo) / resolution
    gx = lo[0] + step[0] * (np.arange(resolution) + 0.5)
    gy = lo[1] + step[1] * (np.arange(resolution) + 0.5)
    dens = {}
    for c, p in present.items():
        hx, hy = bw[c]
        kx = np.exp(-0.5 * ((gx[None, :] - p[:, :1]) / hx) ** 2) / (np.sqrt(2 * np.pi) * hx)
        ky = np.exp(-0.5 * ((gy[None, :] - p[:, 1:]) / hy) ** 2) / (np.sqrt(2 * np.pi) * hy)
        d = ky.T @ kx / len(p)
        mass = d.sum() * step[0] * step[1]
        dens[c] = d / mass if mass > 0 else d
    for c in missing:
        logger.warning("class %s has fewer than 2 points; no density", c)
    return DensityGrid(gx, gy, dens, {c: tuple(map(float, h)) for c, h in bw.items()}, missing)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def contour_segments(Z, x, y, level):
    """Marching-squares line segments of ``Z[iy, ix] == level``."""
    segs = []
    ny, nx = Z.shape
    for j in range(ny - 1):
        for i in range(nx - 1):
            c = (Z[j, i], Z[j, i + 1], Z[j + 1, i + 1], Z[j + 1, i])
            xs = (x[i], x[i + 1], x[i + 1], x[i])
            ys = (y[j], y[j], y[j + 1], y[j + 1])
            pts = []
            for a in range(4):
                b = (a + 1) % 4
                za, zb = c[a], c[b]
                if (za < level) != (zb < level):
                    t = (level - za) / (zb - za)
                    pts.append((xs[a] + t * (xs[b] - xs[a]), ys[a] + t * (ys[b] - ys[a])))
            for k in range(0, len(pts) - 1, 2):
                segs.append((pts[k], pts[k + 1]))
    return segs


_COLORS = {"fraud": "#d62728", "genuine": "#1f77b4"}
_OVERLAY_COLORS = ("#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def _write_grid(path, grid, cls):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "density"])
        D = grid.density[cls]
        for j, yy in enumerate(grid.y):
            for i, xx in enumerate(grid.x):
                w.writerow([repr(float(xx)), repr(float(yy)), repr(float(D[j, i]))])


def _svg(grid, overlays, levels, size=480):
    x0, x1 = grid.x[0], grid.x[-1]
    y0, y1 = grid.y[0], grid.y[-1]

    def sx(v):
        return (v - x0) / (x1 - x0) * size

    def sy(v):
        return size - (v - y0) / (y1 - y0) * size

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for cls in sorted(grid.density):
        D = grid.density[cls]
        top = D.max()
        for frac in levels:
            path = []
            for (ax, ay), (bx, by) in contour_segments(D, grid.x, grid.y, frac * top):
                path.append(f"M{sx(ax):.2f} {sy(ay):.2f}L{sx(bx):.2f} {sy(by):.2f}")
            if path:
                out.append(f'<path d="{"".join(path)}" stroke="{_COLORS.get(cls, "black")}" '
                           f'fill="none" stroke-width="0.8"/>')
    for n, (name, pts) in enumerate(sorted(overlays.items())):
        color = _OVERLAY_COLORS[n % len(_OVERLAY_COLORS)]
        out.append(f'<g fill="{color}" data-name="{name}">')
        for px, py in np.asarray(pts, dtype=float).reshape(-1, 2):
            out.append(f'<circle cx="{sx(px):.2f}" cy="{sy(py):.2f}" r="2"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def export_overlay(grid, overlays, out_dir, levels=(0.1, 0.3, 0.5, 0.7, 0.9)):
    """Write ``grid_<class>.csv``, ``overlay_<name>.csv`` and ``figure.svg``.

    ``overlays`` maps a name to an ``(n, 2)`` array in grid coordinates.
    Returns the list of written paths. Output is byte-deterministic.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for cls in sorted(grid.density):
        p = os.path.join(out_dir, f"grid_{cls}.csv")
        _write_grid(p, grid, cls)
        written.append(p)
    for name, pts in sorted(overlays.items()):
        p = os.path.join(out_dir, f"overlay_{name}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pc1", "pc2"])
            for a, b in np.asarray(pts, dtype=float).reshape(-1, 2):
                w.writerow([repr(float(a)), repr(float(b))])
        written.append(p)
    p = os.path.join(out_dir, "figure.svg")
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write(_svg(grid, overlays, levels))
    written.append(p)
    return written


def score_report(scores, truth, bins=50, by="width"):
    """Per-bin counts of all, genuine and fraudulent scores.

    ``by="width"`` uses ``bins`` equal-width bins over [0, 1];
    ``by="quantile"`` uses empirical quantile edges (``bins=10`` gives
    deciles; tied scores always share a bin, so some bins may be empty).
    Returns a list of dicts with ``lo, hi, n_all, n_genuine, n_fraud,
    fraud_proportion`` (NaN for empty bins). The last bin is closed.
    """
    s = check_scores(scores)
    t = np.asarray(truth)
    if s.size == 0:
        raise UndefinedMetricError("score report of an empty set")
    if t.shape != s.shape:
        raise ValueError("scores and truth must have the same length")
    if s.min() < 0 or s.max() > 1:
        raise ValueError("scores must lie in [0, 1]")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if by == "width":
        edges = np.linspace(0.0, 1.0, bins + 1)
        b = np.clip(np.floor(s * bins).astype(np.int64), 0, bins - 1)
    elif by == "quantile":
        edges = np.quantile(s, np.linspace(0.0, 1.0, bins + 1))
        b = np.searchsorted(edges[1:-1], s, side="right")
    else:
        raise ValueError("by must be 'width' or 'quantile'")
    n_all = np.bincount(b, minlength=bins)
    n_fraud = np.bincount(b, weights=(t == 1).astype(float), minlength=bins).astype(np.int64)
    rows = []
    for i in range(bins):
        rows.append({
            "lo": float(edges[i]),
            "hi": float(edges[i + 1]),
            "n_all": int(n_all[i]),
            "n_genuine": int(n_all[i] - n_fraud[i]),
            "n_fraud": int(n_fraud[i]),
            "fraud_proportion": float(n_fraud[i] / n_all[i]) if n_all[i] else float("nan"),
        })
    return rows


def write_score_report(rows, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
