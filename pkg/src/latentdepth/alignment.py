"""Feature alignment: external patch-token encoders, the projector and the softmax-KL loss.

Feature files (``<sample_id>.feat``) are little-endian::

    sample_id_len u32 | sample_id utf-8 | N u32 | D u32 | N*D float32 row-major
"""

from __future__ import annotations

import shutil
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, NumericalError, ParseError, ShapeError

FEATURE_SUFFIX = ".feat"


@dataclass
class TokenFeatures:
    data: torch.Tensor  # (N, D)
    patch_size: int
    grid: tuple

    def __post_init__(self):
        n_h, n_w = self.grid
        if self.data.dim() != 2 or self.data.shape[0] != n_h * n_w or self.data.shape[1] == 0:
            raise ShapeError(f"token tensor {tuple(self.data.shape)} does not match grid {self.grid}")


class FrozenPatchEncoder(nn.Module):
    """Fixed-seed convolutional patch encoder; a stand-in for a pretrained ViT.

    Smooths the image before patch embedding so tokens respond to shading
    layout more than to fine albedo texture.
    """

    kind = "builtin"

    def __init__(self, patch_size=8, dim=48, hidden=24, seed=1234):
        super().__init__()
        self.patch_size = patch_size
        self.dim = dim
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        self.blur = nn.AvgPool2d(3, stride=1, padding=1, count_include_pad=False)
        self.conv = nn.Conv2d(3, hidden, 3, padding=1)
        self.embed = nn.Conv2d(hidden, dim, patch_size, stride=patch_size)
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) / np.sqrt(max(p[0].numel(), 1)))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def grid(self, h, w):
        return h // self.patch_size, w // self.patch_size

    @torch.no_grad()
    def forward(self, rgb):
        """(B, 3, H, W) in [-1, 1] -> (B, N, D)."""
        if rgb.shape[-1] % self.patch_size or rgb.shape[-2] % self.patch_size:
            raise ShapeError(f"image {tuple(rgb.shape[-2:])} not divisible by patch {self.patch_size}")
        x = F.gelu(self.conv(self.blur(rgb)))
        tokens = self.embed(x)
        return tokens.flatten(2).transpose(1, 2).contiguous()


def write_feature_file(path, sample_id, tokens):
    a = np.ascontiguousarray(np.asarray(tokens, dtype="<f4"))
    if a.ndim != 2:
        raise ShapeError("token features must be (N, D)")
    sid = sample_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(sid)))
        fh.write(sid)
        fh.write(struct.pack("<II", *a.shape))
        fh.write(a.tobytes())


def read_feature_file(path):
    """Returns ``(sample_id, tokens)`` with tokens as an (N, D) float32 array."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(path, f"cannot read feature file ({exc.strerror})") from None
    try:
        (n_id,) = struct.unpack_from("<I", blob, 0)
        sid = blob[4 : 4 + n_id].decode("utf-8")
        n, d = struct.unpack_from("<II", blob, 4 + n_id)
    except (struct.error, UnicodeDecodeError) as exc:
        raise ParseError(path, f"malformed feature header ({exc})") from None
    off = 12 + n_id
    if len(blob) - off != 4 * n * d:
        raise ParseError(path, f"payload holds {len(blob) - off} bytes, header implies {4 * n * d}")
    return sid, np.frombuffer(blob, dtype="<f4", offset=off).reshape(n, d).astype(np.float32)


class FileFeatureEncoder:
    """Looks up precomputed tokens by sample id in a directory of ``.feat`` files."""

    kind = "file"

    def __init__(self, directory, n_tokens=None, dim=None, patch_size=8):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigurationError(f"feature directory {self.directory} does not exist")
        self.n_tokens = n_tokens
        self.dim = dim
        self.patch_size = patch_size

    def grid(self, h, w):
        return h // self.patch_size, w // self.patch_size

    def load(self, sample_id):
        path = self.directory / f"{sample_id}{FEATURE_SUFFIX}"
        if not path.is_file():
            raise ParseError(path, "missing feature file")
        sid, tokens = read_feature_file(path)
        if sid != sample_id:
            raise ParseError(path, f"holds features for {sid!r}, expected {sample_id!r}")
        if (self.n_tokens and tokens.shape[0] != self.n_tokens) or (self.dim and tokens.shape[1] != self.dim):
            raise ParseError(path, f"tokens {tokens.shape} differ from configured ({self.n_tokens}, {self.dim})")
        return torch.from_numpy(tokens)


def external_features(encoder, rgb, sample_id=None) -> TokenFeatures:
    """Token features for one H x W x 3 image in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float32)
    h, w = rgb.shape[:2]
    if h % encoder.patch_size or w % encoder.patch_size:
        raise ShapeError(f"image {h}x{w} not divisible by patch {encoder.patch_size}")
    if isinstance(encoder, FileFeatureEncoder):
        if sample_id is None:
            raise ConfigurationError("file-backed features need a sample id")
        tokens = encoder.load(sample_id)
    else:
        x = torch.from_numpy(2.0 * rgb - 1.0).permute(2, 0, 1)[None]
        tokens = encoder(x)[0]
    return TokenFeatures(tokens, encoder.patch_size, encoder.grid(h, w))


def ingest_features(directory, n_tokens=None, dim=None, out_dir=None):
    """Validate every feature file in a directory and write ``index.txt``.

    With ``out_dir`` the validated files are copied there and the index is
    written next to them; otherwise the index goes into ``directory``.
    Returns the index rows ``(sample_id, N, D, filename)``.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigurationError(f"feature directory {directory} does not exist")
    rows = []
    for path in sorted(directory.glob(f"*{FEATURE_SUFFIX}")):
        sid, tokens = read_feature_file(path)
        if not np.isfinite(tokens).all():
            raise ParseError(path, "non-finite token values")
        if (n_tokens and tokens.shape[0] != n_tokens) or (dim and tokens.shape[1] != dim):
            raise ParseError(path, f"tokens {tokens.shape} differ from configured ({n_tokens}, {dim})")
        rows.append((sid, tokens.shape[0], tokens.shape[1], path.name))
    shapes = {(n, d) for _, n, d, _ in rows}
    if len(shapes) > 1:
        raise ParseError(directory, f"inconsistent token shapes {sorted(shapes)}")
    if not rows:
        raise ParseError(directory, f"no {FEATURE_SUFFIX} files found")
    target = Path(out_dir) if out_dir else directory
    target.mkdir(parents=True, exist_ok=True)
    if target.resolve() != directory.resolve():
        for _, _, _, name in rows:
            shutil.copyfile(directory / name, target / name)
    with open(target / "index.txt", "w") as fh:
        fh.write("sample_id\tN\tD\tfile\n")
        for r in rows:
            fh.write("\t".join(map(str, r)) + "\n")
    return rows


class Projector(nn.Module):
    """Bilinear resampling of a U-Net feature map to the token grid, then a per-token 2-layer MLP."""

    def __init__(self, in_channels, token_grid, dim, hidden=None):
        super().__init__()
        self.in_channels = in_channels
        self.token_grid = tuple(token_grid)
        self.dim = dim
        hidden = hidden or max(dim, in_channels)
        self.mlp = nn.Sequential(nn.Linear(in_channels, hidden), nn.SiLU(), nn.Linear(hidden, dim))

    def resample(self, feat):
        if tuple(feat.shape[-2:]) == self.token_grid:
            return feat
        return F.interpolate(feat, size=self.token_grid, mode="bilinear", align_corners=False)

    def forward(self, feat):
        """(B, C, h, w) -> (B, N, D); a single (C, h, w) map gives (N, D)."""
        single = feat.dim() == 3
        if single:
            feat = feat[None]
        if feat.shape[1] != self.in_channels:
            raise ShapeError(f"projector expects {self.in_channels} channels, got {feat.shape[1]}")
        tokens = self.resample(feat).flatten(2).transpose(1, 2)
        out = self.mlp(tokens)
        return out[0] if single else out


def project(projector, feature_map):
    return projector(feature_map)


def feature_alignment_loss(f_ext, f_unet, temperature=1.0):
    """Token-averaged KL(softmax(f_ext) || softmax(f_unet)) along the feature axis."""
    if f_ext.shape != f_unet.shape:
        raise ShapeError(f"external {tuple(f_ext.shape)} vs projected {tuple(f_unet.shape)}")
    if not (torch.isfinite(f_ext).all() and torch.isfinite(f_unet).all()):
        raise NumericalError("non-finite features in alignment loss")
    p = F.softmax(f_ext / temperature, dim=-1)
    log_q = F.log_softmax(f_unet / temperature, dim=-1)
    kl = F.kl_div(log_q, p, reduction="none").sum(-1)
    return kl.mean()
