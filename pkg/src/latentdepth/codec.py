"""Miniature image-to-latent autoencoder (factor 4, 4 latent channels)."""

from __future__ import annotations

import logging
import warnings

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint as ckpt
from .errors import NumericalError, ShapeError
from .metrics import aggregate, evaluate_sample
from .preprocess import TargetMode, denormalize, prepare_target, target_to_depth

log = logging.getLogger(__name__)

FACTOR = 4
LATENT_CHANNELS = 4


def _norm(kind, c):
    if kind == "group":
        return nn.GroupNorm(min(8, c), c)
    return nn.Identity()


class LatentCodec(nn.Module):
    """Conv encoder with two stride-2 stages and a mirrored nearest-upsampling decoder."""

    def __init__(self, widths=(16, 32), latent_channels=LATENT_CHANNELS, in_channels=3, norm="group",
                 upsample="nearest"):
        super().__init__()
        w1, w2 = widths
        self.norm = norm
        self.upsample = upsample
        _gn = lambda c: _norm(norm, c)
        _up = lambda: nn.Upsample(scale_factor=2, mode=upsample)
        self.widths = tuple(widths)
        self.latent_channels = latent_channels
        self.in_channels = in_channels
        self.factor = FACTOR
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, w1, 3, padding=1), _gn(w1), nn.SiLU(),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1), _gn(w2), nn.SiLU(),
            nn.Conv2d(w2, w2, 3, padding=1), _gn(w2), nn.SiLU(),
            nn.Conv2d(w2, w2, 3, stride=2, padding=1), _gn(w2), nn.SiLU(),
            nn.Conv2d(w2, latent_channels, 3, padding=1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, w2, 3, padding=1), _gn(w2), nn.SiLU(),
            nn.Conv2d(w2, w2, 3, padding=1), _gn(w2), nn.SiLU(),
            _up(),
            nn.Conv2d(w2, w1, 3, padding=1), _gn(w1), nn.SiLU(),
            _up(),
            nn.Conv2d(w1, w1, 3, padding=1), _gn(w1), nn.SiLU(),
            nn.Conv2d(w1, in_channels, 3, padding=1),
        )
        self.range_warnings = 0

    def config(self):
        return {"widths": list(self.widths), "latent_channels": self.latent_channels,
                "in_channels": self.in_channels, "factor": self.factor, "norm": self.norm,
                "upsample": self.upsample}

    def encode_tensor(self, x):
        if x.shape[-1] % self.factor or x.shape[-2] % self.factor:
            raise ShapeError(f"raster size {tuple(x.shape[-2:])} not divisible by {self.factor}")
        if x.shape[-3] != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} channels, got {x.shape[-3]}")
        return self.encoder(x)

    def decode_tensor(self, z):
        if z.shape[-3] != self.latent_channels:
            raise ShapeError(f"latent has {z.shape[-3]} channels, codec expects {self.latent_channels}")
        return self.decoder(z)

    def freeze(self):
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self


def _to_chw(raster):
    t = torch.as_tensor(np.asarray(raster), dtype=torch.float32)
    if t.ndim != 3 or t.shape[-1] != 3:
        raise ShapeError(f"expected an H x W x 3 raster, got {tuple(t.shape)}")
    return t.permute(2, 0, 1)


@torch.no_grad()
def encode(codec: LatentCodec, raster3):
    """H x W x 3 raster in [-1, 1] -> latent tensor (C_l, H/4, W/4)."""
    x = _to_chw(raster3)
    if x.abs().max().item() > 1.0 + 1e-3:
        codec.range_warnings += 1
        warnings.warn("codec input outside [-1, 1]", RuntimeWarning, stacklevel=2)
    return codec.encode_tensor(x[None])[0]


@torch.no_grad()
def decode(codec: LatentCodec, latent):
    """Latent (C_l, h, w) -> H x W x 3 raster."""
    z = torch.as_tensor(latent, dtype=torch.float32)
    if z.ndim != 3:
        raise ShapeError(f"expected a (C, h, w) latent, got {tuple(z.shape)}")
    return codec.decode_tensor(z[None])[0].permute(1, 2, 0).numpy()


def depth_raster(norm_target):
    """Replicate a normalized single-channel target to the codec's 3 channels."""
    return np.repeat(np.asarray(norm_target, dtype=np.float32)[..., None], 3, axis=-1)


def codec_training_rasters(samples, modes=tuple(TargetMode)):
    """RGB rasters plus normalized target rasters (every mode), all as N x 3 x H x W in [-1, 1]."""
    rgb = [2.0 * s.rgb - 1.0 for s in samples]
    depth = []
    for s in samples:
        for m in modes:
            norm, _ = prepare_target(s.depth, s.mask, m)
            depth.append(depth_raster(norm))
    to_t = lambda xs: torch.from_numpy(np.stack(xs).astype(np.float32)).permute(0, 3, 1, 2).contiguous()
    return to_t(rgb), to_t(depth)


def train_codec(samples, iterations=2000, lr=2e-3, batch_size=16, seed=0, log_every=100, codec=None,
                depth_fraction=0.75):
    """Fit the autoencoder by reconstruction MSE; ``depth_fraction`` of each batch is depth rasters.

    Returns ``(codec, losses)``; the codec comes back frozen.
    """
    torch.manual_seed(seed)
    codec = codec if codec is not None else LatentCodec()
    codec.train()
    rgb, depth = codec_training_rasters(samples)
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(iterations, 1), eta_min=lr * 0.05)
    losses = []
    half = batch_size - int(round(batch_size * depth_fraction))
    for it in range(iterations + 1):
        x = torch.cat([rgb[rng.integers(len(rgb), size=half)],
                       depth[rng.integers(len(depth), size=batch_size - half)]])
        if rng.random() < 0.5:
            x = x.flip(-1)
        loss = F.mse_loss(codec.decode_tensor(codec.encode_tensor(x)), x)
        if not torch.isfinite(loss):
            raise NumericalError(f"codec training diverged at iteration {it}")
        losses.append(loss.item())
        if it == iterations:
            break
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        sched.step()
        if log_every and it % log_every == 0:
            log.info("codec it=%d loss=%.5f", it, losses[-1])
    return codec.freeze(), losses


@torch.no_grad()
def reconstruct_depth(codec, sample, mode=TargetMode.sqrt_disparity):
    """decode(encode(gt)) mapped back to metric depth with the sample's own NormParams."""
    norm, params = prepare_target(sample.depth, sample.mask, mode)
    rec = decode(codec, encode(codec, depth_raster(norm))).mean(-1)
    rec = np.clip(rec, -1.0, 1.0)
    depth, ok = target_to_depth(denormalize(rec, params), mode, sample.mask)
    return depth, ok


@torch.no_grad()
def reconstruction_mse(codec, samples):
    rgb, depth = codec_training_rasters(samples, modes=(TargetMode.sqrt_disparity,))
    out = {}
    for name, x in (("rgb", rgb), ("depth", depth)):
        out[name] = float(F.mse_loss(codec.decode_tensor(codec.encode_tensor(x)), x))
    return out


def reconstruction_eval(codec, samples, mode=TargetMode.sqrt_disparity, space="depth"):
    """AbsRel / delta1 / boundary F1 of codec round trips of ground-truth depth, per domain."""
    groups = {}
    for s in samples:
        depth, ok = reconstruct_depth(codec, s, mode)
        row = evaluate_sample(np.where(ok, depth, 1.0), s.depth, ok & s.mask, space)
        row["id"] = s.sample_id
        groups.setdefault(s.domain_tag.value, []).append(row)
    return {name: aggregate(name, rows, space).summary() | {"n_samples": len(rows)}
            for name, rows in sorted(groups.items())}


def save_codec(codec, path, extra_meta=None):
    meta = {"kind": "codec", "config": codec.config(), "hash": ckpt.state_hash(codec)}
    meta.update(extra_meta or {})
    ckpt.save_container(path, ckpt.prefixed(codec.state_dict(), "codec"), meta,
                        f=codec.factor, c_l=codec.latent_channels)


def codec_from_tensors(meta_cfg, tensors, prefix="codec"):
    codec = LatentCodec(tuple(meta_cfg["widths"]), meta_cfg["latent_channels"], meta_cfg["in_channels"],
                        meta_cfg.get("norm", "group"), meta_cfg.get("upsample", "nearest"))
    codec.load_state_dict(ckpt.unprefixed(tensors, prefix))
    return codec.freeze()


def load_codec(path):
    header, meta, tensors = ckpt.load_container(path)
    return codec_from_tensors(meta["config"], tensors)
