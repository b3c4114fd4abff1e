"""Static figures: target histograms, ablation tables, loss curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DegenerateError  # noqa: E402
from .preprocess import TargetMode, entropy, target_histogram  # noqa: E402

PLOT_KINDS = ("histogram", "ablation-table", "loss-curve")


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated renders byte-identical
    meta = {"Software": None} if path.suffix == ".png" else {"Date": None, "Creator": None}
    fig.savefig(path, metadata=meta)
    plt.close(fig)
    return path


def plot_histogram(samples, path, bins=50):
    """Overlay normalized-target distributions of depth, disparity and sqrt-disparity."""
    if not samples:
        raise DegenerateError("no samples to histogram")
    fig, ax = plt.subplots(figsize=(6, 4))
    stats = {}
    for mode in TargetMode:
        mass, edges = target_histogram(samples, mode, bins)
        centers = 0.5 * (edges[1:] + edges[:-1])
        stats[mode.value] = entropy(mass)
        ax.step(centers, mass, where="mid", label=f"{mode.value} (H={stats[mode.value]:.2f} nats)")
    ax.set_xlabel("normalized target")
    ax.set_ylabel("fraction of valid pixels")
    ax.legend()
    ax.set_title(f"target distributions, {len(samples)} samples")
    _save(fig, path)
    return stats


def plot_ablation_table(rows, path, title=None):
    """Render an ablation table (list of dicts with a ``row`` label) as an image."""
    if not rows:
        raise DegenerateError("ablation report has no rows")
    cols = list(rows[0].keys())
    cells = [[_cell(r.get(c, "")) for c in cols] for r in rows]
    fig, ax = plt.subplots(figsize=(max(6, 1.3 * len(cols)), 0.5 + 0.4 * (len(rows) + 1)))
    ax.axis("off")
    table = ax.table(cellText=cells, colLabels=cols, loc="center")
    table.auto_set_font_size(False)
    table.set_fontsize(7)
    if title:
        ax.set_title(title)
    _save(fig, path)
    return len(rows)


def _cell(v):
    if isinstance(v, float):
        return f"{v:.3f}"
    try:
        return f"{float(v):.3f}"
    except (TypeError, ValueError):
        return {"True": "x", "False": ""}.get(str(v), str(v))


def plot_loss_curve(log_rows, path):
    if not log_rows:
        raise DegenerateError("training log has no rows")
    steps = np.array([r["step"] for r in log_rows])
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("loss_total", "loss_latent", "loss_fa", "loss_pixel", "loss_h"):
        vals = np.array([r.get(key, 0.0) for r in log_rows])
        if np.any(vals != 0):
            ax.plot(steps, vals, label=key)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.legend()
    _save(fig, path)
    return len(log_rows)


def save_preview(depth, path):
    """Colour-mapped inverse-depth preview PNG."""
    inv = 1.0 / np.maximum(np.asarray(depth, dtype=np.float64), 1e-6)
    lo, hi = np.percentile(inv, [1, 99])
    img = np.clip((inv - lo) / max(hi - lo, 1e-12), 0, 1)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plt.imsave(path, img, cmap="magma", metadata={"Software": None})
    return path
