"""Training objectives: latent MSE, masked pixel MSE, 4-direction gradients and the gradient Huber loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, DegenerateError, ShapeError

# (row offset, column offset): horizontal, vertical, diagonal, anti-diagonal
DIRECTIONS = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class LossConfig:
    delta: float = 0.1
    lambda_fa: float = 1.0
    lambda_h: float = 0.001
    classical_huber: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError(f"huber delta must be positive, got {self.delta}")
        if self.lambda_fa < 0 or self.lambda_h < 0:
            raise ConfigurationError("loss weights must be non-negative")


@dataclass
class GradientStack:
    data: torch.Tensor  # (..., H, W, 4)
    validity: torch.Tensor  # (..., H, W, 4) bool


def _check_same(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def latent_loss(z_gt, z_pred):
    _check_same(z_gt, z_pred)
    return F.mse_loss(z_pred, z_gt)


def _per_sample_mean(values, mask, what):
    """Mean over valid entries of each sample (leading dim), then over samples."""
    mask = mask.to(values.dtype)
    flat_v = values.reshape(values.shape[0], -1)
    flat_m = mask.reshape(mask.shape[0], -1)
    counts = flat_m.sum(1)
    if (counts == 0).any():
        raise DegenerateError(f"{what}: a sample has no valid entries")
    return ((flat_v * flat_m).sum(1) / counts).mean()


def pixel_loss(d_gt_norm, d_pred_norm, mask=None):
    """Masked MSE; (H, W) maps or (B, H, W) batches (per-sample mean, then batch mean)."""
    _check_same(d_gt_norm, d_pred_norm)
    if mask is None:
        mask = torch.ones_like(d_gt_norm, dtype=torch.bool)
    diff = d_pred_norm - d_gt_norm
    values = torch.where(mask.bool(), diff * diff, torch.zeros_like(diff))
    if values.dim() == 2:
        values, mask = values[None], mask[None]
    return _per_sample_mean(values, mask, "pixel_loss")


def directional_gradients(depth_map, mask=None) -> GradientStack:
    """G[..., i, j, k] = map[i + di_k, j + dj_k] - map[i, j].

    Entries whose neighbour is out of bounds, or where either pixel is
    invalid, are zero and flagged invalid.
    """
    m = torch.as_tensor(depth_map)
    if mask is None:
        valid = torch.ones_like(m, dtype=torch.bool)
    else:
        valid = torch.as_tensor(mask).bool()
        _check_same(m, valid)
    h, w = m.shape[-2:]
    padded = F.pad(m, (1, 1, 0, 1))
    pvalid = F.pad(valid.to(m.dtype), (1, 1, 0, 1)) > 0.5
    data, flags = [], []
    for di, dj in DIRECTIONS:
        nb = padded[..., di : di + h, 1 + dj : 1 + dj + w]
        ok = valid & pvalid[..., di : di + h, 1 + dj : 1 + dj + w]
        data.append(torch.where(ok, nb - m, torch.zeros_like(m)))
        flags.append(ok)
    return GradientStack(torch.stack(data, -1), torch.stack(flags, -1))


def huber_elementwise(x, delta, classical=False):
    ax = x.abs()
    if classical:
        return torch.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))
    # linear inside the knee, quadratic outside, continuous at |x| = delta
    return torch.where(ax <= delta, delta * ax, 0.5 * x * x + 0.5 * delta * delta)


def gradient_huber_loss(g_gt, g_pred, validity, delta=0.1, classical=False):
    """Mean of the piecewise penalty on x = g_gt - g_pred over valid entries.

    Inputs are (H, W, 4) stacks or (B, H, W, 4) batches.
    """
    if not delta > 0:
        raise ConfigurationError(f"huber delta must be positive, got {delta}")
    _check_same(g_gt, g_pred)
    validity = validity.bool()
    x = g_gt - g_pred
    values = torch.where(validity, huber_elementwise(x, delta, classical), torch.zeros_like(x))
    if values.dim() == 3:
        values, validity = values[None], validity[None]
    return _per_sample_mean(values, validity, "gradient_huber_loss")


def stage2_losses(d_pred_norm, d_gt_norm, mask, cfg: LossConfig, use_pixel=True, use_huber=True):
    """Returns (total, pixel, huber) for decoded predictions against normalized targets."""
    zero = d_pred_norm.new_zeros(())
    lp = pixel_loss(d_gt_norm, d_pred_norm, mask) if use_pixel else zero
    lh = zero
    if use_huber:
        g_gt = directional_gradients(d_gt_norm, mask)
        g_pred = directional_gradients(d_pred_norm, mask)
        lh = gradient_huber_loss(g_gt.data, g_pred.data, g_gt.validity, cfg.delta, cfg.classical_huber)
    return lp + cfg.lambda_h * lh, lp, lh
