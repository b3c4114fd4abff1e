"""Procedural RGB-D scenes, raster file I/O, dataset mixing and flip augmentation.

On-disk layout of a dataset::

    <root>/<split>/<id>/rgb.ppm      binary P6, 8-bit (16-bit accepted on read)
    <root>/<split>/<id>/depth.pfm    little-endian single-channel PFM
    <root>/<split>/<id>/mask.pgm     binary P5, 255 = valid
    <root>/<split>/<id>/meta.txt     domain=<tag> / far_plane=<float>
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError

CODEC_FACTOR = 4
FAR_PLANE_OUTDOOR = 80.0
INDOOR_RANGE = (0.3, 10.0)


class DomainTag(str, enum.Enum):
    indoor_like = "indoor_like"
    outdoor_like = "outdoor_like"


@dataclass
class Sample:
    rgb: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32 meters
    mask: np.ndarray  # (H, W) bool
    domain_tag: DomainTag
    far_plane: float = FAR_PLANE_OUTDOOR
    sample_id: str = ""

    def __post_init__(self):
        self.domain_tag = DomainTag(self.domain_tag)
        h, w = self.depth.shape
        if self.rgb.shape != (h, w, 3) or self.mask.shape != (h, w):
            raise ConfigurationError(
                f"rgb {self.rgb.shape}, depth {self.depth.shape}, mask {self.mask.shape} disagree"
            )

    @property
    def shape(self):
        return self.depth.shape


# --------------------------------------------------------------------------- rendering


def _ray_box(dx, dy, lo, hi):
    """Entry depth of rays (dx, dy, 1) from the origin into an axis-aligned box, inf on miss."""
    dirs = (dx, dy, np.ones_like(dx))
    t_near = np.zeros_like(dx)
    t_far = np.full_like(dx, np.inf)
    for d, a, b in zip(dirs, lo, hi):
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(d != 0, a / d, np.where(a <= 0, -np.inf, np.inf))
            t2 = np.where(d != 0, b / d, np.where(b >= 0, np.inf, -np.inf))
        t_near = np.maximum(t_near, np.minimum(t1, t2))
        t_far = np.minimum(t_far, np.maximum(t1, t2))
    hit = (t_near <= t_far) & (t_near > 0)
    return np.where(hit, t_near, np.inf)


def _ray_ellipsoid(dx, dy, center, radii):
    d = np.stack([dx, dy, np.ones_like(dx)], axis=-1) / radii
    c = np.asarray(center) / radii
    a = (d * d).sum(-1)
    b = -2.0 * (d @ c)
    cc = c @ c - 1.0
    disc = b * b - 4 * a * cc
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _texture(rng, h, w):
    """Image-space albedo pattern, independent of scene geometry."""
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.25, 0.95, size=3)
    kind = rng.integers(0, 3)
    if kind == 0:
        freq = rng.uniform(0.05, 0.35, size=2) * rng.choice([-1, 1], size=2)
        pat = np.sin(2 * np.pi * (freq[0] * u + freq[1] * v) + rng.uniform(0, 2 * np.pi))
    elif kind == 1:
        cell = rng.integers(2, 9)
        pat = (((u // cell) + (v // cell)) % 2) * 2.0 - 1.0
    else:
        coarse = rng.uniform(-1, 1, size=(h // 4 + 2, w // 4 + 2))
        pat = np.kron(coarse, np.ones((4, 4)))[:h, :w]
    amp = rng.uniform(0.15, 0.5)
    tint = rng.uniform(0.7, 1.3, size=3)
    return np.clip(base * (1.0 + amp * pat[..., None] * tint), 0.0, 1.0)


def _shade(depth, dx, dy, light):
    pts = np.stack([depth * dx, depth * dy, depth], axis=-1)
    du = np.gradient(pts, axis=1)
    dv = np.gradient(pts, axis=0)
    n = np.cross(du, dv)
    n /= np.linalg.norm(n, axis=-1, keepdims=True) + 1e-12
    view = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    n = np.where(((n * view).sum(-1) > 0)[..., None], -n, n)
    return np.clip((n * light).sum(-1), 0.0, 1.0)


def check_size(size, factor=CODEC_FACTOR):
    h, w = size
    if h < 32 or w < 32:
        raise ConfigurationError(f"scene size {size} below the 32-pixel minimum")
    if h % factor or w % factor:
        raise ConfigurationError(f"scene size {size} not divisible by codec factor {factor}")


def generate_scene(seed: int, profile, size=(64, 64), sparse=False) -> Sample:
    """Render a ground plane plus 3-10 boxes/ellipsoids with Lambertian shading.

    Depth is planar z. Albedo textures are drawn in image space per object so
    that colour edges carry no geometric information.
    """
    profile = DomainTag(profile)
    check_size(size)
    h, w = size
    rng = np.random.default_rng([int(seed), 0 if profile is DomainTag.indoor_like else 1])

    f = w * rng.uniform(0.85, 1.15)
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0 + rng.uniform(-0.15, 0.1) * h
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    dx = (u - cx) / f
    dy = (v - cy) / f

    layers = []  # one depth map per primitive; list index is the region id
    if profile is DomainTag.indoor_like:
        far = rng.uniform(6.0, 10.0)
        cam_h = rng.uniform(1.0, 1.6)
        ceil_h = rng.uniform(1.0, 1.8)
        with np.errstate(divide="ignore"):
            layers.append(np.where(dy > 0, cam_h / dy, np.inf))
            layers.append(np.where(dy < 0, -ceil_h / dy, np.inf))
        layers.append(np.full((h, w), far))
        z_range, size_range = (1.0, far - 1.0), (0.3, 1.4)
    else:
        far = FAR_PLANE_OUTDOOR
        cam_h = rng.uniform(1.4, 2.2)
        with np.errstate(divide="ignore"):
            layers.append(np.where(dy > 0, cam_h / dy, np.inf))
        layers.append(np.full((h, w), far))
        z_range, size_range = (4.0, 45.0), (1.5, 6.0)

    n_obj = int(rng.integers(3, 11))
    for _ in range(n_obj):
        z = rng.uniform(*z_range)
        half_fov_x = 0.5 * w / f
        x = rng.uniform(-half_fov_x, half_fov_x) * z
        sx, sy, sz = rng.uniform(*size_range, size=3)
        if rng.random() < 0.5:
            lo = np.array([x - sx / 2, cam_h - sy, z])
            hi = np.array([x + sx / 2, cam_h, z + sz])
            layers.append(_ray_box(dx, dy, lo, hi))
        else:
            center = np.array([x, cam_h - sy / 2 * rng.uniform(0.6, 1.6), z + sz / 2])
            layers.append(_ray_ellipsoid(dx, dy, center, np.array([sx, sy, sz]) / 2))

    stack = np.stack(layers)
    region = stack.argmin(0)
    depth = stack.min(0)
    depth = np.minimum(depth, far)
    if profile is DomainTag.indoor_like:
        depth = np.clip(depth, *INDOOR_RANGE)

    light = rng.normal(size=3)
    light[2] = -abs(light[2]) - 0.5
    light[1] = -abs(light[1])
    light /= np.linalg.norm(light)
    ambient = rng.uniform(0.15, 0.35)
    shade = ambient + (1 - ambient) * _shade(depth, dx, dy, light)
    if profile is DomainTag.outdoor_like:
        shade = np.where(depth >= far, 1.0, shade)

    albedo = np.zeros((h, w, 3))
    for k in range(len(layers)):
        sel = region == k
        if sel.any():
            albedo[sel] = _texture(rng, h, w)[sel]
    rgb = np.clip(albedo * shade[..., None], 0.0, 1.0)

    if sparse:
        mask = rng.random((h, w)) < 0.2
    else:
        mask = np.ones((h, w), dtype=bool)
    return Sample(
        rgb=rgb.astype(np.float32),
        depth=depth.astype(np.float32),
        mask=mask,
        domain_tag=profile,
        far_plane=float(far) if profile is DomainTag.outdoor_like else INDOOR_RANGE[1],
        sample_id=f"{profile.value}_{seed:06d}",
    )


def generate_split(n, seed, size=(64, 64), ratios=(9, 1), sparse=False):
    """n scenes whose domains are drawn indoor:outdoor by `ratios`."""
    rng = np.random.default_rng([int(seed), 77])
    p = np.asarray(ratios, dtype=np.float64)
    tags = (DomainTag.indoor_like, DomainTag.outdoor_like)
    picks = rng.choice(2, size=n, p=p / p.sum())
    return [generate_scene(seed * 100_003 + i, tags[k], size, sparse=sparse) for i, k in enumerate(picks)]


# --------------------------------------------------------------------------- raster formats


def _read_header_tokens(fh, count, path):
    """Read `count` whitespace-separated header tokens from a netpbm-style stream."""
    tokens = []
    while len(tokens) < count:
        line = fh.readline()
        if not line:
            raise ParseError(path, "truncated header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    if len(tokens) != count:
        raise ParseError(path, "malformed header")
    return tokens


def write_pfm(path, depth):
    depth = np.asarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError("PFM depth must be a 2-D array")
    h, w = depth.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM scanlines run bottom to top
        fh.write(np.ascontiguousarray(depth[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic == b"PF":
            raise ParseError(path, "3-channel PFM ('PF') where single-channel depth ('Pf') is required")
        if magic != b"Pf":
            raise ParseError(path, f"bad PFM magic {magic[:8]!r}")
        try:
            w, h = (int(t) for t in _read_header_tokens(fh, 2, path))
            scale = float(_read_header_tokens(fh, 1, path)[0])
        except ValueError as exc:
            raise ParseError(path, f"malformed header ({exc})") from None
        if w <= 0 or h <= 0 or scale == 0:
            raise ParseError(path, "malformed header")
        payload = fh.read()
    if len(payload) < 4 * w * h:
        raise ParseError(path, f"truncated payload: {len(payload)} of {4 * w * h} bytes")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(payload[: 4 * w * h], dtype=dtype).reshape(h, w)[::-1]
    return data.astype(np.float32)


def _write_pnm(path, magic, raster, maxval):
    h, w = raster.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster, dtype=dtype).tobytes())


def _read_pnm(path, expected_magic, channels):
    with open(path, "rb") as fh:
        magic = fh.readline().split(b"#", 1)[0].strip()
        if magic != expected_magic:
            raise ParseError(path, f"expected {expected_magic.decode()} raster, got {magic[:8]!r}")
        try:
            w, h, maxval = (int(t) for t in _read_header_tokens(fh, 3, path))
        except ValueError as exc:
            raise ParseError(path, f"malformed header ({exc})") from None
        if w <= 0 or h <= 0 or not 0 < maxval < 65536:
            raise ParseError(path, "malformed header")
        payload = fh.read()
    dtype = np.dtype(">u2" if maxval > 255 else "u1")
    n = w * h * channels
    if len(payload) < n * dtype.itemsize:
        raise ParseError(path, f"truncated payload: {len(payload)} of {n * dtype.itemsize} bytes")
    data = np.frombuffer(payload[: n * dtype.itemsize], dtype=dtype)
    shape = (h, w, channels) if channels > 1 else (h, w)
    return data.reshape(shape), maxval


def write_ppm(path, rgb, bits=8):
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(np.asarray(rgb, dtype=np.float64), 0, 1) * maxval)
    _write_pnm(path, "P6", q, maxval)


def read_ppm(path) -> np.ndarray:
    data, maxval = _read_pnm(path, b"P6", 3)
    return (data.astype(np.float64) / maxval).astype(np.float32)


def write_pgm(path, mask):
    _write_pnm(path, "P5", np.where(np.asarray(mask, dtype=bool), 255, 0), 255)


def read_pgm(path) -> np.ndarray:
    data, maxval = _read_pnm(path, b"P5", 1)
    return data >= (maxval + 1) // 2


def _read_meta(path):
    meta = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(path, f"unreadable ({exc.strerror})") from None
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(path, f"expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def write_sample(sample: Sample, dir_path):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "rgb": d / "rgb.ppm",
        "depth": d / "depth.pfm",
        "mask": d / "mask.pgm",
        "meta": d / "meta.txt",
    }
    write_ppm(paths["rgb"], sample.rgb)
    write_pfm(paths["depth"], sample.depth)
    write_pgm(paths["mask"], sample.mask)
    paths["meta"].write_text(
        f"domain={sample.domain_tag.value}\nfar_plane={sample.far_plane!r}\n"
    )
    return paths


def read_sample(dir_path) -> Sample:
    d = Path(dir_path)
    for name in ("rgb.ppm", "depth.pfm", "mask.pgm", "meta.txt"):
        if not (d / name).is_file():
            raise ParseError(d / name, "missing file")
    depth = read_pfm(d / "depth.pfm")
    rgb = read_ppm(d / "rgb.ppm")
    if rgb.shape[:2] != depth.shape:
        raise ParseError(d / "rgb.ppm", f"size {rgb.shape[:2]} does not match depth {depth.shape}")
    mask = read_pgm(d / "mask.pgm")
    if mask.shape != depth.shape:
        raise ParseError(d / "mask.pgm", f"size {mask.shape} does not match depth {depth.shape}")
    meta = _read_meta(d / "meta.txt")
    try:
        tag = DomainTag(meta.get("domain", "indoor_like"))
        far = float(meta.get("far_plane", FAR_PLANE_OUTDOOR))
    except ValueError as exc:
        raise ParseError(d / "meta.txt", str(exc)) from None
    return Sample(rgb=rgb, depth=depth, mask=mask, domain_tag=tag, far_plane=far, sample_id=d.name)


def write_split(samples, root, split):
    out = Path(root) / split
    for s in samples:
        write_sample(s, out / s.sample_id)
    return out


class DatasetDir(Sequence):
    """Lazily reads the samples of one split directory, ordered by sample id."""

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_dir():
            raise ConfigurationError(f"dataset directory {self.path} does not exist")
        self.ids = sorted(p.name for p in self.path.iterdir() if (p / "depth.pfm").is_file())

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return read_sample(self.path / self.ids[i])


# --------------------------------------------------------------------------- mixing / augmentation


@dataclass
class DatasetMixture:
    """Seeded stream choosing source i with probability ratio_i / sum(ratios)."""

    sources: list
    ratios: list
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not self.sources:
            raise ConfigurationError("mixture needs at least one source")
        if len(self.sources) != len(self.ratios):
            raise ConfigurationError(f"{len(self.sources)} sources but {len(self.ratios)} ratios")
        if any(not r > 0 for r in self.ratios):
            raise ConfigurationError(f"mixture ratios must be positive, got {self.ratios}")
        for i, src in enumerate(self.sources):
            if len(src) == 0:
                raise ConfigurationError(f"mixture source {i} is empty")
        p = np.asarray(self.ratios, dtype=np.float64)
        self.probs = p / p.sum()
        self.rng = np.random.default_rng(self.seed)

    def draw_index(self):
        """(source index, item index) of the next draw."""
        src = int(self.rng.choice(len(self.sources), p=self.probs))
        return src, int(self.rng.integers(len(self.sources[src])))

    def draw(self):
        src, idx = self.draw_index()
        return self.sources[src][idx]

    def __iter__(self) -> Iterator:
        while True:
            yield self.draw()

    def get_state(self):
        return self.rng.bit_generator.state

    def set_state(self, state):
        self.rng.bit_generator.state = state


def make_mixture(sources, ratios, seed) -> DatasetMixture:
    return DatasetMixture(list(sources), list(ratios), seed)


def augment_hflip(sample: Sample, p: float, rng: np.random.Generator) -> Sample:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"flip probability {p} outside [0, 1]")
    if rng.random() >= p:
        return sample
    return replace(
        sample,
        rgb=np.ascontiguousarray(sample.rgb[:, ::-1]),
        depth=np.ascontiguousarray(sample.depth[:, ::-1]),
        mask=np.ascontiguousarray(sample.mask[:, ::-1]),
    )


def split_dirs(root):
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)
