"""Three-level latent U-Net used as a single-step latent-to-latent regressor.

The timestep embedding is kept but always evaluated at t = 1. Feature taps
are exposed after the first and second down blocks (``D1``, ``D2``) and the
middle block (``Mid``). A frequency-domain enhancer can be attached to the
middle block.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, NumericalError, ShapeError

TAP_LOCATIONS = ("D1", "D2", "Mid")
TIMESTEP = 1


def _groups(c):
    for g in (8, 4, 2, 1):
        if c % g == 0:
            return g
    return 1


def _activation(name):
    if name == "silu":
        return nn.SiLU()
    if name == "gelu":
        return nn.GELU()
    if name == "tanh":
        return nn.Tanh()
    if name == "identity":
        return nn.Identity()
    raise ConfigurationError(f"unknown activation {name!r}")


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = float(t) * freqs
    return torch.cat([torch.cos(args), torch.sin(args)])


class ResBlock(nn.Module):
    def __init__(self, cin, cout, temb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(temb_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class FrequencyEnhancer(nn.Module):
    """Spatial pass plus a spectral pass, fused by a 1x1 convolution.

    The spectral pass takes the unnormalized 2-D FFT of each channel, stacks
    real and imaginary parts as 2C channels, applies conv + activation,
    recombines and returns the real part of the inverse FFT. The fusion
    convolution starts as identity on the spatial half and zero on the
    spectral half.
    """

    def __init__(self, channels, kernel_size=1, activation="silu"):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ConfigurationError("modulator kernel size must be odd")
        self.channels = channels
        self.kernel_size = kernel_size
        self.activation_name = activation
        pad_mode = "circular" if kernel_size > 1 else "zeros"
        self.modulator = nn.Conv2d(2 * channels, 2 * channels, kernel_size,
                                   padding=kernel_size // 2, padding_mode=pad_mode)
        self.act = _activation(activation)
        self.fusion = nn.Conv2d(2 * channels, channels, 1)
        self.reset_fusion()

    @torch.no_grad()
    def reset_fusion(self):
        w = torch.zeros_like(self.fusion.weight)
        w[:, : self.channels, 0, 0] = torch.eye(self.channels)
        self.fusion.weight.copy_(w)
        self.fusion.bias.zero_()

    @torch.no_grad()
    def set_identity_modulator(self):
        self.modulator.weight.zero_()
        k = self.kernel_size // 2
        self.modulator.weight[:, :, k, k] = torch.eye(2 * self.channels)
        self.modulator.bias.zero_()
        self.act = nn.Identity()
        self.activation_name = "identity"

    def frequency_pass(self, f_mid):
        if not torch.isfinite(f_mid).all():
            raise NumericalError("non-finite features entering the frequency pass")
        spec = torch.fft.fft2(f_mid, dim=(-2, -1))
        stacked = torch.cat([spec.real, spec.imag], dim=-3)
        mod = self.act(self.modulator(stacked))
        c = self.channels
        out = torch.fft.ifft2(torch.complex(mod[..., :c, :, :], mod[..., c:, :, :]), dim=(-2, -1))
        return out.real

    def fuse(self, f_s, f_f):
        if f_s.shape != f_f.shape:
            raise ShapeError(f"spatial {tuple(f_s.shape)} and frequency {tuple(f_f.shape)} features differ")
        return self.fusion(torch.cat([f_s, f_f], dim=-3))

    def forward(self, f_mid):
        return self.fuse(f_mid, self.frequency_pass(f_mid))


class DenoiserUNet(nn.Module):
    def __init__(self, latent_channels=4, widths=(32, 64, 128), temb_dim=64,
                 enhancer=False, enhancer_kernel=1, enhancer_activation="silu"):
        super().__init__()
        w1, w2, w3 = widths
        self.latent_channels = latent_channels
        self.widths = tuple(widths)
        self.temb_dim = temb_dim
        self.enhancer_kernel = enhancer_kernel
        self.enhancer_activation = enhancer_activation
        self.register_buffer("t_freq", timestep_embedding(TIMESTEP, temb_dim).float(), persistent=False)
        self.temb_mlp = nn.Sequential(nn.Linear(temb_dim, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        self.conv_in = nn.Conv2d(latent_channels, w1, 3, padding=1)
        self.down1 = ResBlock(w1, w1, temb_dim)
        self.pool1 = nn.Conv2d(w1, w1, 3, stride=2, padding=1)
        self.down2 = ResBlock(w1, w2, temb_dim)
        self.pool2 = nn.Conv2d(w2, w2, 3, stride=2, padding=1)
        self.down3 = ResBlock(w2, w3, temb_dim)
        self.mid = ResBlock(w3, w3, temb_dim)
        self.enhancer = None
        if enhancer:
            self.attach_enhancer()
        self.up3 = ResBlock(w3 + w3, w3, temb_dim)
        self.up2 = ResBlock(w3 + w2, w2, temb_dim)
        self.up1 = ResBlock(w2 + w1, w1, temb_dim)
        self.norm_out = nn.GroupNorm(_groups(w1), w1)
        self.conv_out = nn.Conv2d(w1, latent_channels, 3, padding=1)

    def attach_enhancer(self):
        ref = self.conv_in.weight
        self.enhancer = FrequencyEnhancer(self.widths[2], self.enhancer_kernel, self.enhancer_activation).to(
            device=ref.device, dtype=ref.dtype)
        return self.enhancer

    def config(self):
        return {
            "levels": 3,
            "latent_channels": self.latent_channels,
            "widths": list(self.widths),
            "temb_dim": self.temb_dim,
            "enhancer_enabled": self.enhancer is not None,
            "enhancer_kernel": self.enhancer_kernel,
            "enhancer_activation": self.enhancer_activation,
        }

    @classmethod
    def from_config(cls, cfg):
        return cls(cfg["latent_channels"], tuple(cfg["widths"]), cfg["temb_dim"],
                   cfg.get("enhancer_enabled", False), cfg.get("enhancer_kernel", 1),
                   cfg.get("enhancer_activation", "silu"))

    # two stride-2 downsamplings: latent sides must be multiples of this
    stride = 4

    def forward(self, z, return_taps=False):
        s = self.stride
        if z.dim() != 4 or z.shape[1] != self.latent_channels or z.shape[-1] % s or z.shape[-2] % s:
            raise ShapeError(f"latent batch of shape {tuple(z.shape)} does not fit this U-Net")
        temb = self.temb_mlp(self.t_freq)[None].expand(z.shape[0], -1)
        h = self.conv_in(z)
        d1 = self.down1(h, temb)
        d2 = self.down2(self.pool1(d1), temb)
        d3 = self.down3(self.pool2(d2), temb)
        mid = self.mid(d3, temb)
        if self.enhancer is not None:
            mid = self.enhancer(mid)
        u = self.up3(torch.cat([mid, d3], 1), temb)
        u = F.interpolate(u, scale_factor=2, mode="nearest")
        u = self.up2(torch.cat([u, d2], 1), temb)
        u = F.interpolate(u, scale_factor=2, mode="nearest")
        u = self.up1(torch.cat([u, d1], 1), temb)
        out = self.conv_out(F.silu(self.norm_out(u)))
        if return_taps:
            return out, {"D1": d1, "D2": d2, "Mid": mid}
        return out


def _batched(z):
    z = torch.as_tensor(z)
    return (z[None], True) if z.dim() == 3 else (z, False)


def predict_latent(model, z_rgb):
    """One deterministic forward pass at t = 1; accepts (C, h, w) or (B, C, h, w)."""
    z, single = _batched(z_rgb)
    out = model(z)
    return out[0] if single else out


def tap_features(model, z_rgb, location):
    """Activation leaving the named block, from the same forward pass as the prediction.

    Returns ``(z_pred, feature)``.
    """
    if location not in TAP_LOCATIONS:
        raise ConfigurationError(f"unknown tap location {location!r}; expected one of {TAP_LOCATIONS}")
    z, single = _batched(z_rgb)
    out, taps = model(z, return_taps=True)
    feat = taps[location]
    return (out[0], feat[0]) if single else (out, feat)


def infer_iterative(model, z_rgb, k=1):
    """Feed the prediction back through the U-Net k times."""
    if k < 1:
        raise ConfigurationError(f"iteration count must be >= 1, got {k}")
    z = z_rgb
    for _ in range(k):
        z = predict_latent(model, z)
    return z
