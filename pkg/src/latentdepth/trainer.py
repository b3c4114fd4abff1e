"""Two-stage curriculum: latent regression with feature alignment, then pixel-space detail tuning."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from .alignment import FileFeatureEncoder, FrozenPatchEncoder, Projector, feature_alignment_loss
from .codec import LatentCodec, codec_from_tensors, depth_raster
from .dataio import DomainTag, make_mixture
from .denoiser import TAP_LOCATIONS, DenoiserUNet
from .errors import ConfigurationError, IntegrityError, NumericalError, ParseError
from .losses import LossConfig, latent_loss, stage2_losses
from .metrics import DegenerateError, aggregate, config_hash, evaluate_sample
from .preprocess import NormParams, TargetMode, denormalize, prepare_target, target_to_depth

log = logging.getLogger(__name__)

DEFAULT_LR = {1: 3e-5, 2: 3e-6}
FULL_ITERATIONS = {1: 20_000, 2: 10_000}
DESK_ITERATIONS = {1: 4_000, 2: 2_000}
STAGE_TERMS = {
    1: {"latent_loss": True, "pixel_loss": False, "huber_loss": False, "enhancer": False},
    2: {"latent_loss": False, "pixel_loss": True, "huber_loss": True, "enhancer": True},
}
# "target" aligns in the space the model predicts (depth, disparity or sqrt-disparity)
EVAL_SPACES = ("depth", "disparity", "sqrt_disparity", "target")
LOG_COLUMNS = ("step", "loss_total", "loss_latent", "loss_fa", "loss_pixel", "loss_h", "wall_s")


@dataclass
class TrainConfig:
    stage: int = 1
    lr: Optional[float] = None
    iterations: Optional[int] = None
    micro_batch: int = 8
    accum_steps: int = 4
    lambda_fa: float = 1.0
    lambda_h: float = 0.001
    huber_delta: float = 0.1
    classical_huber: bool = False
    alignment_location: str = "Mid"
    target_mode: str = "sqrt_disparity"
    seed: int = 0
    weight_decay: float = 0.01
    hflip_p: float = 0.5
    mix_ratio: str = "9:1"
    checkpoint_every: int = 500
    latent_loss: Optional[bool] = None
    pixel_loss: Optional[bool] = None
    huber_loss: Optional[bool] = None
    enhancer: Optional[bool] = None
    token_dim: int = 48
    patch_size: int = 8
    p_lo: float = 2.0
    p_hi: float = 98.0
    eval_space: str = "depth"
    log_every: int = 50

    def resolved(self) -> "TrainConfig":
        if self.stage not in (1, 2):
            raise ConfigurationError(f"stage must be 1 or 2, got {self.stage}")
        upd = {}
        if self.lr is None:
            upd["lr"] = DEFAULT_LR[self.stage]
        if self.iterations is None:
            upd["iterations"] = DESK_ITERATIONS[self.stage]
        for k, v in STAGE_TERMS[self.stage].items():
            if getattr(self, k) is None:
                upd[k] = v
        cfg = dataclasses.replace(self, **upd)
        cfg.validate()
        return cfg

    def validate(self):
        if not (self.lr or 0) > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.lr}")
        if self.micro_batch < 1 or self.accum_steps < 1:
            raise ConfigurationError("micro_batch and accum_steps must be >= 1")
        if self.alignment_location not in TAP_LOCATIONS:
            raise ConfigurationError(f"alignment_location must be one of {TAP_LOCATIONS}")
        TargetMode(self.target_mode)
        if self.eval_space not in EVAL_SPACES:
            raise ConfigurationError(f"eval_space must be one of {EVAL_SPACES}, got {self.eval_space!r}")
        LossConfig(self.huber_delta, self.lambda_fa, self.lambda_h, self.classical_huber)
        self.ratios()

    @property
    def alignment_space(self):
        """Space the evaluation fits scale/shift in; ``target`` follows the prediction target."""
        return TargetMode(self.target_mode).value if self.eval_space == "target" else self.eval_space

    @property
    def effective_batch(self):
        return self.micro_batch * self.accum_steps

    def ratios(self):
        try:
            r = [float(x) for x in str(self.mix_ratio).split(":")]
        except ValueError:
            raise ConfigurationError(f"bad mix_ratio {self.mix_ratio!r}") from None
        if len(r) != 2 or min(r) <= 0:
            raise ConfigurationError(f"mix_ratio needs two positive parts, got {self.mix_ratio!r}")
        return r

    def loss_config(self):
        return LossConfig(self.huber_delta, self.lambda_fa, self.lambda_h, self.classical_huber)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={'none' if v is None else v}")
        return "\n".join(lines) + "\n"

    def hash(self):
        return config_hash(self.to_text())

    @classmethod
    def from_mapping(cls, mapping, base=None):
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        upd = {}
        for k, v in mapping.items():
            k = k.strip().replace("-", "_")
            if k not in types:
                raise ConfigurationError(f"unknown config key {k!r}")
            upd[k] = _coerce(k, types[k], v)
        return dataclasses.replace(base, **upd)

    @classmethod
    def from_text(cls, text, base=None, path="<config>"):
        kv = {}
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(path, f"line {n}: expected key=value")
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
        return cls.from_mapping(kv, base)


def _coerce(name, typ, value):
    if not isinstance(value, str):
        return value
    v = value.strip()
    if v.lower() == "none":
        return None
    typ = str(typ)
    try:
        if "bool" in typ:
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if "int" in typ:
            return int(v)
        if "float" in typ:
            return float(v)
    except ValueError:
        raise ConfigurationError(f"bad value {value!r} for {name}") from None
    return v


# --------------------------------------------------------------------------- data cache


def _to_chw(arrs):
    return torch.from_numpy(np.stack(arrs).astype(np.float32)).permute(0, 3, 1, 2).contiguous()


class TrainingSet:
    """Training samples with frozen-codec latents and external tokens precomputed for both flips."""

    def __init__(self, samples, codec, mode, encoder, p_lo=2.0, p_hi=98.0, batch=64):
        if not samples:
            raise ConfigurationError("empty training set")
        self.samples = samples
        self.mode = TargetMode(mode)
        self.ids = [s.sample_id for s in samples]
        self.domains = [s.domain_tag for s in samples]
        targets, params = [], []
        for s in samples:
            t, p = prepare_target(s.depth, s.mask, self.mode, p_lo, p_hi)
            targets.append(t)
            params.append(p)
        self.params = params
        self.ref_params = reference_params(params)
        self.rgb = _to_chw([2.0 * s.rgb - 1.0 for s in samples])
        self.target = torch.from_numpy(np.stack(targets).astype(np.float32))
        self.mask = torch.from_numpy(np.stack([s.mask for s in samples]))
        depth3 = _to_chw([depth_raster(t) for t in targets])
        z_rgb, z_gt = [], []
        with torch.no_grad():
            for flip in (False, True):
                zr, zg = [], []
                for i in range(0, len(samples), batch):
                    x = self.rgb[i : i + batch]
                    d = depth3[i : i + batch]
                    if flip:
                        x, d = x.flip(-1), d.flip(-1)
                    zr.append(codec.encode_tensor(x))
                    zg.append(codec.encode_tensor(d))
                z_rgb.append(torch.cat(zr))
                z_gt.append(torch.cat(zg))
        self.z_rgb = torch.stack(z_rgb)
        self.z_gt = torch.stack(z_gt)
        self.ext = None
        if encoder is not None:
            self.ext = torch.stack([self._tokens(encoder, flip) for flip in (False, True)])

    def _tokens(self, encoder, flip):
        h, w = self.rgb.shape[-2:]
        if isinstance(encoder, FileFeatureEncoder):
            toks = torch.stack([encoder.load(i) for i in self.ids])
            if flip:
                n_h, n_w = encoder.grid(h, w)
                toks = toks.reshape(len(self.ids), n_h, n_w, -1).flip(2).reshape(len(self.ids), n_h * n_w, -1)
            return toks
        x = self.rgb.flip(-1) if flip else self.rgb
        return torch.cat([encoder(x[i : i + 64]) for i in range(0, len(x), 64)])

    def __len__(self):
        return len(self.samples)

    def domain_indices(self):
        return {tag: [i for i, d in enumerate(self.domains) if d is tag] for tag in DomainTag}

    def batch(self, idx, flips):
        idx = torch.as_tensor(idx, dtype=torch.long)
        fl = torch.as_tensor(flips, dtype=torch.bool)
        sel = fl.long()
        out = {"z_rgb": self.z_rgb[sel, idx], "z_gt": self.z_gt[sel, idx]}
        t, m = self.target[idx], self.mask[idx]
        out["target"] = torch.where(fl[:, None, None], t.flip(-1), t)
        out["mask"] = torch.where(fl[:, None, None], m.flip(-1), m)
        if self.ext is not None:
            out["ext"] = self.ext[sel, idx]
        return out


def reference_params(params):
    """Dataset-level normalization used to map predictions back to depth when no GT is available."""
    lo = float(np.median([p.lo for p in params]))
    hi = float(np.median([p.hi for p in params]))
    p0 = params[0]
    return NormParams(lo, hi, p0.p_lo, p0.p_hi, p0.mode)


def build_encoder(cfg, image_size=64, feature_dir=None):
    if feature_dir:
        n = (image_size // cfg.patch_size) ** 2
        return FileFeatureEncoder(feature_dir, n, cfg.token_dim, cfg.patch_size)
    return FrozenPatchEncoder(cfg.patch_size, cfg.token_dim)


def build_model(cfg, latent_channels=4, widths=(32, 64, 128)):
    torch.manual_seed(cfg.seed)
    return DenoiserUNet(latent_channels, widths, enhancer=False)


def build_projector(cfg, model, image_size=(64, 64)):
    loc = TAP_LOCATIONS.index(cfg.alignment_location)
    h, w = (image_size, image_size) if isinstance(image_size, int) else image_size
    grid = (h // cfg.patch_size, w // cfg.patch_size)
    torch.manual_seed(cfg.seed + 1)
    return Projector(model.widths[loc], grid, cfg.token_dim)


# --------------------------------------------------------------------------- checkpoints


@dataclass
class TrainState:
    model: DenoiserUNet
    codec: LatentCodec
    cfg: TrainConfig
    ref_params: NormParams
    projector: Optional[Projector] = None
    optimizer: Optional[torch.optim.Optimizer] = None
    step: int = 0
    rng_state: Optional[dict] = None
    encoder_hash: str = ""
    stage1_hash: str = ""


def save_checkpoint(path, st: TrainState):
    tensors = {}
    tensors.update(ckpt.prefixed(st.model.state_dict(), "model"))
    tensors.update(ckpt.prefixed(st.codec.state_dict(), "codec"))
    if st.projector is not None:
        tensors.update(ckpt.prefixed(st.projector.state_dict(), "projector"))
    optim_meta = None
    if st.optimizer is not None:
        sd = st.optimizer.state_dict()
        for pid, slots in sd["state"].items():
            for k, v in slots.items():
                tensors[f"optim/{pid}/{k}"] = v if torch.is_tensor(v) else torch.tensor(v)
        optim_meta = sd["param_groups"]
    tensors["rng/torch"] = torch.get_rng_state()
    meta = {
        "kind": "denoiser",
        "stage": st.cfg.stage,
        "step": st.step,
        "config": st.cfg.to_text(),
        "config_hash": st.cfg.hash(),
        "model_config": st.model.config() | {"target_mode": st.cfg.target_mode},
        "codec_config": st.codec.config(),
        "codec_hash": ckpt.state_hash(st.codec),
        "encoder_hash": st.encoder_hash,
        "stage1_hash": st.stage1_hash,
        "ref_norm": dataclasses.asdict(st.ref_params) | {"mode": TargetMode(st.ref_params.mode).value},
        "projector_config": None if st.projector is None else {
            "in_channels": st.projector.in_channels, "token_grid": list(st.projector.token_grid),
            "dim": st.projector.dim},
        "optim_param_groups": optim_meta,
        "mixture_rng": st.rng_state,
    }
    ckpt.save_container(path, tensors, meta, f=st.codec.factor, c_l=st.codec.latent_channels)


def load_checkpoint(path) -> TrainState:
    path = Path(path)
    if not path.is_file():
        raise ParseError(path, "checkpoint not found")
    header, meta, tensors = ckpt.load_container(path)
    if meta.get("kind") != "denoiser":
        raise ParseError(path, f"expected a denoiser checkpoint, found {meta.get('kind')!r}")
    cfg = TrainConfig.from_text(meta["config"], path=path)
    model = DenoiserUNet.from_config(meta["model_config"])
    model.load_state_dict(ckpt.unprefixed(tensors, "model"))
    codec = codec_from_tensors(meta["codec_config"], tensors)
    if ckpt.state_hash(codec) != meta["codec_hash"]:
        raise IntegrityError(f"{path}: stored codec does not match its recorded hash")
    projector = None
    if meta.get("projector_config"):
        pc = meta["projector_config"]
        projector = Projector(pc["in_channels"], tuple(pc["token_grid"]), pc["dim"])
        projector.load_state_dict(ckpt.unprefixed(tensors, "projector"))
    rn = meta["ref_norm"]
    ref = NormParams(rn["lo"], rn["hi"], rn["p_lo"], rn["p_hi"], TargetMode(rn["mode"]))
    st = TrainState(model, codec, cfg, ref, projector, step=meta["step"], rng_state=meta.get("mixture_rng"),
                    encoder_hash=meta.get("encoder_hash", ""), stage1_hash=meta.get("stage1_hash", ""))
    st.optim_tensors = {k[len("optim/"):]: torch.from_numpy(v) for k, v in tensors.items() if k.startswith("optim/")}
    st.optim_groups = meta.get("optim_param_groups")
    st.torch_rng = torch.from_numpy(tensors["rng/torch"]) if "rng/torch" in tensors else None
    st.meta = meta
    return st


def _restore_optimizer(opt, st):
    if not st.optim_groups:
        return
    state = {}
    for key, t in st.optim_tensors.items():
        pid, slot = key.split("/", 1)
        state.setdefault(int(pid), {})[slot] = t.clone()
    opt.load_state_dict({"state": state, "param_groups": st.optim_groups})


# --------------------------------------------------------------------------- training loop


def _mixture_over(data: TrainingSet, cfg):
    groups = data.domain_indices()
    ratios = cfg.ratios()
    sources, weights = [], []
    for tag, r in zip((DomainTag.indoor_like, DomainTag.outdoor_like), ratios):
        if groups[tag]:
            sources.append(groups[tag])
            weights.append(r)
    return make_mixture(sources, weights, cfg.seed)


def _micro_batch(mixture, data, cfg):
    idx, flips = [], []
    for _ in range(cfg.micro_batch):
        idx.append(mixture.draw())
        flips.append(mixture.rng.random() < cfg.hflip_p)
    return data.batch(idx, flips)


def compute_losses(model, projector, codec, batch, cfg):
    """Objective for one micro-batch; returns (total, parts dict)."""
    lc = cfg.loss_config()
    use_fa = projector is not None and cfg.lambda_fa > 0 and "ext" in batch
    z_pred, taps = model(batch["z_rgb"], return_taps=True)
    zero = z_pred.new_zeros(())
    parts = {"loss_latent": zero, "loss_fa": zero, "loss_pixel": zero, "loss_h": zero}
    total = zero
    if cfg.latent_loss:
        parts["loss_latent"] = latent_loss(batch["z_gt"], z_pred)
        total = total + parts["loss_latent"]
    if use_fa:
        parts["loss_fa"] = feature_alignment_loss(batch["ext"], projector(taps[cfg.alignment_location]))
        total = total + cfg.lambda_fa * parts["loss_fa"]
    if cfg.pixel_loss or cfg.huber_loss:
        decoded = codec.decode_tensor(z_pred).mean(1)
        s2, lp, lh = stage2_losses(decoded, batch["target"], batch["mask"], lc,
                                   use_pixel=cfg.pixel_loss, use_huber=cfg.huber_loss)
        parts["loss_pixel"], parts["loss_h"] = lp, lh
        total = total + s2
    return total, parts


def _check_frozen(codec, codec_hash, encoder, encoder_hash):
    if ckpt.state_hash(codec) != codec_hash:
        raise IntegrityError("frozen codec parameters changed during training")
    if isinstance(encoder, torch.nn.Module) and ckpt.state_hash(encoder) != encoder_hash:
        raise IntegrityError("frozen external encoder parameters changed during training")


def train(st: TrainState, data: TrainingSet, out_dir=None, encoder=None, val_samples=None,
          stop_at=None, log_rows=None):
    """Run the optimisation loop from ``st.step`` up to ``cfg.iterations`` (or ``stop_at``).

    Gradients of mean-reduced micro-batch losses are accumulated over
    ``accum_steps`` before each AdamW step.
    """
    cfg = st.cfg
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.resolved").write_text(cfg.to_text())
    params = list(st.model.parameters()) + (list(st.projector.parameters()) if st.projector else [])
    if st.optimizer is None:
        st.optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
        if getattr(st, "optim_groups", None):
            _restore_optimizer(st.optimizer, st)
    mixture = _mixture_over(data, cfg)
    if st.rng_state is not None:
        mixture.set_state(st.rng_state)
    if getattr(st, "torch_rng", None) is not None:
        torch.set_rng_state(st.torch_rng)
    codec_hash = ckpt.state_hash(st.codec)
    if not st.encoder_hash and isinstance(encoder, torch.nn.Module):
        st.encoder_hash = ckpt.state_hash(encoder)
    st.model.train()
    if st.projector:
        st.projector.train()
    end = cfg.iterations if stop_at is None else min(stop_at, cfg.iterations)
    rows = log_rows if log_rows is not None else []
    log_fh = None
    if out:
        new = st.step == 0 or not (out / "run.log").exists()
        log_fh = open(out / "run.log", "w" if new else "a", newline="")
        writer = csv.writer(log_fh)
        if new:
            writer.writerow(LOG_COLUMNS)
    best = float("inf")
    last_good = None
    t0 = time.perf_counter()
    try:
        while st.step < end:
            st.optimizer.zero_grad(set_to_none=True)
            acc = {"loss_total": 0.0, "loss_latent": 0.0, "loss_fa": 0.0, "loss_pixel": 0.0, "loss_h": 0.0}
            for _ in range(cfg.accum_steps):
                batch = _micro_batch(mixture, data, cfg)
                total, parts = compute_losses(st.model, st.projector, st.codec, batch, cfg)
                if not torch.isfinite(total):
                    raise NumericalError(
                        f"non-finite loss at step {st.step}; last good checkpoint: {last_good or 'none'}")
                (total / cfg.accum_steps).backward()
                acc["loss_total"] += total.item() / cfg.accum_steps
                for k, v in parts.items():
                    acc[k] += v.item() / cfg.accum_steps
            st.optimizer.step()
            st.step += 1
            row = {"step": st.step, **acc, "wall_s": round(time.perf_counter() - t0, 3)}
            rows.append(row)
            if log_fh and (st.step % cfg.log_every == 0 or st.step == end or st.step == 1):
                writer.writerow([row[c] for c in LOG_COLUMNS])
                log_fh.flush()
            if out and (st.step % cfg.checkpoint_every == 0 or st.step == end):
                st.rng_state = mixture.get_state()
                _check_frozen(st.codec, codec_hash, encoder, st.encoder_hash)
                save_checkpoint(out / "last.ckpt", st)
                last_good = out / "last.ckpt"
                if val_samples:
                    score = evaluate_model(st.model, st.codec, val_samples, st.ref_params, cfg)["all"].abs_rel
                    st.model.train()
                    if score < best:
                        best = score
                        save_checkpoint(out / "best.ckpt", st)
    finally:
        if log_fh:
            log_fh.close()
    st.rng_state = mixture.get_state()
    _check_frozen(st.codec, codec_hash, encoder, st.encoder_hash)
    st.model.eval()
    return st


def train_stage1(codec, data: TrainingSet, cfg: TrainConfig, encoder=None, out_dir=None,
                 val_samples=None, resume=None, stop_at=None, model=None):
    cfg = dataclasses.replace(cfg, stage=1).resolved()
    if resume is not None:
        st = load_checkpoint(resume) if not isinstance(resume, TrainState) else resume
        if ckpt.state_hash(st.codec) != ckpt.state_hash(codec):
            raise IntegrityError("resume checkpoint was trained against a different codec")
        st.cfg = cfg
        st.codec = codec
    else:
        model = model if model is not None else build_model(cfg)
        if model.enhancer is not None:
            raise ConfigurationError("stage 1 runs with the frequency enhancer detached")
        projector = None
        if cfg.lambda_fa > 0 and encoder is not None:
            projector = build_projector(cfg, model, tuple(data.rgb.shape[-2:]))
            projector.to(next(model.parameters()).dtype)
        st = TrainState(model, codec, cfg, data.ref_params, projector)
        torch.manual_seed(cfg.seed + 2)
    return train(st, data, out_dir, encoder, val_samples, stop_at)


def start_stage2(stage1: TrainState, cfg: TrainConfig) -> TrainState:
    """Stage-2 state: copy of the stage-1 U-Net, enhancer attached with identity fusion, projector dropped."""
    cfg = dataclasses.replace(cfg, stage=2).resolved()
    model = DenoiserUNet.from_config(stage1.model.config() | {"enhancer_enabled": False})
    model.load_state_dict(stage1.model.state_dict())
    if cfg.enhancer:
        torch.manual_seed(cfg.seed + 3)
        model.attach_enhancer()
    st = TrainState(model, stage1.codec, cfg, stage1.ref_params, None,
                    stage1_hash=ckpt.state_hash(stage1.model))
    torch.manual_seed(cfg.seed + 4)
    return st


def train_stage2(stage1, data: TrainingSet, cfg: TrainConfig, out_dir=None, val_samples=None,
                 resume=None, stop_at=None):
    if resume is not None:
        st = load_checkpoint(resume) if not isinstance(resume, TrainState) else resume
        st.cfg = dataclasses.replace(cfg, stage=2).resolved()
    else:
        s1 = load_checkpoint(stage1) if not isinstance(stage1, TrainState) else stage1
        st = start_stage2(s1, cfg)
    return train(st, data, out_dir, None, val_samples, stop_at)


# --------------------------------------------------------------------------- inference / evaluation


@torch.no_grad()
def predict_normalized(model, codec, rgb, k=1, batch=64):
    """(B, 3, H, W) RGB in [-1, 1] -> (B, H, W) normalized target prediction in [-1, 1]."""
    model.eval()
    outs = []
    for i in range(0, len(rgb), batch):
        z = codec.encode_tensor(rgb[i : i + batch])
        for _ in range(k):
            z = model(z)
        outs.append(codec.decode_tensor(z).mean(1).clamp(-1.0, 1.0))
    return torch.cat(outs)


def normalized_to_depth(pred_norm, ref_params: NormParams, mode):
    target = denormalize(np.asarray(pred_norm, dtype=np.float64), ref_params)
    return target_to_depth(target, mode)


def predict_depth(model, codec, samples, ref_params, mode, k=1):
    rgb = _to_chw([2.0 * s.rgb - 1.0 for s in samples])
    pred = predict_normalized(model, codec, rgb, k).numpy()
    return [normalized_to_depth(p, ref_params, mode) for p in pred]


def evaluate_predictions(preds, samples, space="depth", cfg_hash="", dataset="val"):
    """Per-domain and overall MetricsReports for precomputed depth predictions."""
    groups = {"all": []}
    excluded = []
    for pred, s in zip(preds, samples):
        try:
            row = evaluate_sample(pred, s.depth, s.mask, space)
        except DegenerateError as exc:
            excluded.append({"id": s.sample_id, "reason": str(exc)})
            continue
        row["id"] = s.sample_id
        groups["all"].append(row)
        groups.setdefault(s.domain_tag.value, []).append(row)
    return {name: aggregate(name if name != "all" else dataset, rows, space, cfg_hash,
                            excluded if name == "all" else ())
            for name, rows in groups.items()}


def evaluate_model(model, codec, samples, ref_params, cfg: TrainConfig, k=1, dataset="val"):
    preds = predict_depth(model, codec, samples, ref_params, cfg.target_mode, k)
    return evaluate_predictions(preds, samples, cfg.alignment_space, cfg.hash(), dataset)


def read_log(path):
    with open(path) as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
