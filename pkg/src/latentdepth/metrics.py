"""Affine-invariant depth evaluation: least-squares alignment, AbsRel, delta1, boundary F1."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateError, NumericalError

DEPTH_FLOOR = 1e-3
EDGE_THRESHOLDS = (0.05, 0.1, 0.15, 0.2, 0.25)
EDGE_RADIUS = 1


# inverse-depth alignment spaces and their exponents
INVERSE_SPACES = {"disparity": 1.0, "sqrt_disparity": 0.5}


def _valid(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    return np.asarray(mask, dtype=bool)


def fit_scale_shift(x, y):
    """Closed-form least squares for min_{s,t} sum (s*x + t - y)^2."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 2:
        raise DegenerateError("alignment needs at least 2 valid pixels")
    xm, ym = x.mean(), y.mean()
    xc = x - xm
    var = (xc * xc).sum()
    if not var > 1e-12 * max(1.0, (x * x).sum()):
        raise DegenerateError("constant prediction cannot be aligned")
    s = (xc * (y - ym)).sum() / var
    return float(s), float(ym - s * xm)


def affine_align(pred_depth, gt_depth, mask=None, space="depth"):
    """Align a prediction to ground truth with a per-image scale and shift.

    In ``space="disparity"`` (or ``"sqrt_disparity"``) the fit is done on
    1/depth (1/sqrt(depth)) and the result is mapped back to depth. Returns
    ``(scale, shift, aligned_depth)``; aligned values are floored at 1e-3 m.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    m = _valid(mask, gt.shape)
    if space == "depth":
        s, t = fit_scale_shift(pred[m], gt[m])
        aligned = s * pred + t
    elif space in INVERSE_SPACES:
        power = INVERSE_SPACES[space]
        with np.errstate(divide="ignore"):
            pd = 1.0 / np.maximum(pred, DEPTH_FLOOR) ** power
            gd = np.where(m, 1.0 / np.where(m, gt, 1.0) ** power, 0.0)
        s, t = fit_scale_shift(pd[m], gd[m])
        # aligned depth capped at 1e4 m
        aligned = 1.0 / np.maximum(s * pd + t, 1.0 / 1e4 ** power) ** (1.0 / power)
    else:
        raise ValueError(f"unknown alignment space {space!r}")
    return s, t, np.maximum(aligned, DEPTH_FLOOR)


def abs_rel(aligned, gt, mask=None):
    gt = np.asarray(gt, dtype=np.float64)
    m = _valid(mask, gt.shape)
    if not m.any():
        raise DegenerateError("abs_rel over an empty mask")
    g = gt[m]
    a = np.asarray(aligned, dtype=np.float64)[m]
    return float(np.mean(np.abs(g - a) / g) * 100.0)


def delta1(aligned, gt, mask=None, threshold=1.25):
    """Percent of valid pixels with max(a/g, g/a) strictly below 1.25.

    Non-positive predictions count as failures.
    """
    gt = np.asarray(gt, dtype=np.float64)
    m = _valid(mask, gt.shape)
    if not m.any():
        raise DegenerateError("delta1 over an empty mask")
    g = gt[m]
    a = np.asarray(aligned, dtype=np.float64)[m]
    pos = a > 0
    ratio = np.full_like(g, np.inf)
    ratio[pos] = np.maximum(a[pos] / g[pos], g[pos] / a[pos])
    return float(np.mean(ratio < threshold) * 100.0)


def _normalized_inverse(depth, mask):
    inv = np.zeros_like(depth)
    inv[mask] = 1.0 / np.maximum(depth[mask], DEPTH_FLOOR)
    lo, hi = inv[mask].min(), inv[mask].max()
    if hi > lo:
        inv = (inv - lo) / (hi - lo)
    else:
        inv = np.zeros_like(inv)
    return np.where(mask, inv, 0.0)


def edge_magnitude(depth, mask=None):
    """Gradient magnitude of min-max normalized inverse depth (forward differences)."""
    depth = np.asarray(depth, dtype=np.float64)
    m = _valid(mask, depth.shape)
    n = _normalized_inverse(depth, m)
    gx = np.zeros_like(n)
    gy = np.zeros_like(n)
    gx[:, :-1] = np.where(m[:, :-1] & m[:, 1:], n[:, 1:] - n[:, :-1], 0.0)
    gy[:-1, :] = np.where(m[:-1, :] & m[1:, :], n[1:, :] - n[:-1, :], 0.0)
    return np.hypot(gx, gy)


def _f1(pred_edges, gt_edges, radius):
    n_p, n_g = pred_edges.sum(), gt_edges.sum()
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    struct = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    near_gt = ndimage.binary_dilation(gt_edges, structure=struct)
    near_pred = ndimage.binary_dilation(pred_edges, structure=struct)
    precision = (pred_edges & near_gt).sum() / n_p
    recall = (gt_edges & near_pred).sum() / n_g
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def edge_f1(pred_depth, gt_depth, mask=None, thresholds=EDGE_THRESHOLDS, radius=EDGE_RADIUS):
    """Boundary F1 averaged over a sweep of edge thresholds.

    A predicted edge pixel counts as correct when a ground-truth edge lies
    within `radius` pixels (Chebyshev), and symmetrically for recall. When
    neither map has an edge at some threshold that threshold scores 1.0.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    m = _valid(mask, gt.shape)
    if not (np.isfinite(pred[m]).all() and np.isfinite(gt[m]).all()):
        raise NumericalError("edge_f1 received non-finite depth")
    if not m.any():
        raise DegenerateError("edge_f1 over an empty mask")
    mp = edge_magnitude(pred, m)
    mg = edge_magnitude(gt, m)
    return float(np.mean([_f1(mp > t, mg > t, radius) for t in thresholds]))


def evaluate_sample(pred_depth, gt_depth, mask=None, space="depth"):
    s, t, aligned = affine_align(pred_depth, gt_depth, mask, space)
    return {
        "scale": s,
        "shift": t,
        "abs_rel": abs_rel(aligned, gt_depth, mask),
        "delta1": delta1(aligned, gt_depth, mask),
        "edge_f1": edge_f1(aligned, gt_depth, mask),
    }


@dataclass
class MetricsReport:
    dataset: str
    n_samples: int = 0
    abs_rel: float = float("nan")
    delta1: float = float("nan")
    edge_f1: float = float("nan")
    alignment_mode: str = "depth"
    config_hash: str = ""
    per_sample: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    edge_config: dict = field(
        default_factory=lambda: {"thresholds": list(EDGE_THRESHOLDS), "radius": EDGE_RADIUS}
    )

    def to_json(self, include_samples=True):
        d = asdict(self)
        if not include_samples:
            d.pop("per_sample")
        return json.dumps(d, sort_keys=True, indent=2)

    def summary(self):
        return {"abs_rel": self.abs_rel, "delta1": self.delta1, "edge_f1": self.edge_f1}


def aggregate(dataset, rows, alignment_mode="depth", config_hash="", excluded=()):
    """Mean of per-sample metrics; rows are dicts from `evaluate_sample` plus an ``id``."""
    rep = MetricsReport(dataset=dataset, alignment_mode=alignment_mode, config_hash=config_hash)
    rep.per_sample = list(rows)
    rep.excluded = list(excluded)
    rep.n_samples = len(rows)
    if rows:
        for key in ("abs_rel", "delta1", "edge_f1"):
            setattr(rep, key, float(np.mean([r[key] for r in rows])))
    return rep


def config_hash(obj) -> str:
    text = obj if isinstance(obj, str) else json.dumps(obj, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
