"""Depth -> prediction target conversion and percentile normalization to [-1, 1]."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateError, DomainError, ParseError


class TargetMode(str, enum.Enum):
    depth = "depth"
    disparity = "disparity"
    sqrt_disparity = "sqrt_disparity"


@dataclass(frozen=True)
class NormParams:
    lo: float
    hi: float
    p_lo: float = 2.0
    p_hi: float = 98.0
    mode: TargetMode = TargetMode.sqrt_disparity

    def to_text(self):
        mode = TargetMode(self.mode).value
        return f"lo={self.lo!r}\nhi={self.hi!r}\np_lo={self.p_lo!r}\np_hi={self.p_hi!r}\nmode={mode}\n"

    @classmethod
    def from_text(cls, text, path="<norm.txt>"):
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        try:
            return cls(
                lo=float(kv["lo"]),
                hi=float(kv["hi"]),
                p_lo=float(kv.get("p_lo", 2.0)),
                p_hi=float(kv.get("p_hi", 98.0)),
                mode=TargetMode(kv.get("mode", "sqrt_disparity")),
            )
        except (KeyError, ValueError) as exc:
            raise ParseError(path, f"bad norm params ({exc})") from None

    def save(self, path):
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path):
        return cls.from_text(Path(path).read_text(), path)


def depth_to_target(depth, mask, mode):
    mode = TargetMode(mode)
    depth = np.asarray(depth)
    mask = np.asarray(mask, dtype=bool)
    if mode is TargetMode.depth:
        return depth.copy()
    valid = depth[mask]
    if valid.size and not (valid > 0).all():
        raise DomainError(f"{int((valid <= 0).sum())} valid pixels have non-positive depth")
    out = depth.copy()
    if mode is TargetMode.disparity:
        out[mask] = 1.0 / valid
    else:
        out[mask] = 1.0 / np.sqrt(valid)
    return out


def target_to_depth(target, mode, mask=None):
    """Invert `depth_to_target`.

    Non-positive targets in the inverse modes raise `DomainError` unless a
    mask is given, in which case those pixels come back as NaN and are
    removed from the returned mask: ``(depth, mask)``.
    """
    mode = TargetMode(mode)
    t = np.asarray(target, dtype=np.float64)
    if mode is TargetMode.depth:
        return t.copy() if mask is None else (t.copy(), np.asarray(mask, dtype=bool).copy())
    bad = ~(t > 0)
    if mask is None:
        if bad.any():
            raise DomainError(f"{int(bad.sum())} pixels have non-positive {mode.value} targets")
        ok = np.ones_like(t, dtype=bool)
    else:
        ok = np.asarray(mask, dtype=bool) & ~bad
    out = np.full_like(t, np.nan)
    if mode is TargetMode.disparity:
        out[ok] = 1.0 / t[ok]
    else:
        out[ok] = 1.0 / (t[ok] * t[ok])
    return out if mask is None else (out, ok)


def normalize_percentile(target, mask, p_lo=2.0, p_hi=98.0, mode=TargetMode.sqrt_disparity):
    target = np.asarray(target, dtype=np.float64)
    valid = target[np.asarray(mask, dtype=bool)]
    if valid.size == 0:
        raise DegenerateError("no valid pixels to normalize")
    lo, hi = np.percentile(valid, [p_lo, p_hi])
    if not hi > lo:
        raise DegenerateError(f"degenerate normalization range lo={lo} hi={hi}")
    params = NormParams(float(lo), float(hi), float(p_lo), float(p_hi), TargetMode(mode))
    return apply_norm(target, params), params


def apply_norm(target, params: NormParams):
    out = 2.0 * (np.asarray(target, dtype=np.float64) - params.lo) / (params.hi - params.lo) - 1.0
    return np.clip(out, -1.0, 1.0)


def denormalize(normalized, params: NormParams):
    """Affine inverse of the normalization; values clamped on the way in stay clamped."""
    return (np.asarray(normalized, dtype=np.float64) + 1.0) * 0.5 * (params.hi - params.lo) + params.lo


def prepare_target(depth, mask, mode, p_lo=2.0, p_hi=98.0):
    """depth -> normalized [-1, 1] target raster; invalid pixels are set to 0."""
    mask = np.asarray(mask, dtype=bool)
    raw = depth_to_target(depth, mask, mode)
    norm, params = normalize_percentile(raw, mask, p_lo, p_hi, mode)
    norm = np.where(mask, norm, 0.0)
    return norm, params


def target_histogram(samples, mode, bins=50, p_lo=2.0, p_hi=98.0):
    """Normalized histogram of per-sample normalized targets over [-1, 1].

    Returns ``(mass, edges)`` with ``mass.sum() == 1``.
    """
    values = []
    for s in samples:
        depth, mask = (s.depth, s.mask) if hasattr(s, "depth") else s
        mask = np.asarray(mask, dtype=bool)
        raw = depth_to_target(depth, mask, mode)
        v = raw[mask].astype(np.float64)
        if v.size == 0:
            continue
        lo, hi = np.percentile(v, [p_lo, p_hi])
        if hi > lo:
            v = np.clip(2.0 * (v - lo) / (hi - lo) - 1.0, -1.0, 1.0)
        else:
            v = np.zeros_like(v)
        values.append(v)
    if not values:
        raise DegenerateError("histogram of an empty dataset")
    counts, edges = np.histogram(np.concatenate(values), bins=bins, range=(-1.0, 1.0))
    return counts / counts.sum(), edges


def entropy(mass):
    p = np.asarray(mass, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())
