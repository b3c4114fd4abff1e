"""Command-line entry points.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import ablation, plotting
from .alignment import ingest_features
from .codec import load_codec, reconstruction_eval, save_codec, train_codec
from .dataio import DatasetDir, generate_split, read_pfm, read_ppm, read_sample, write_pfm, write_split
from .errors import ConfigurationError, LatentDepthError, ParseError, ShapeError
from .trainer import (
    TrainConfig,
    TrainingSet,
    build_encoder,
    evaluate_model,
    evaluate_predictions,
    load_checkpoint,
    normalized_to_depth,
    predict_normalized,
    read_log,
    train_stage1,
    train_stage2,
    write_json,
)

log = logging.getLogger("latentdepth")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- helpers


def _load_split(data_dir, split):
    root = Path(data_dir)
    path = root / split if (root / split).is_dir() else root
    samples = list(DatasetDir(path))
    if not samples:
        raise ConfigurationError(f"no readable samples under {path}")
    return samples


def _out(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ratio(text):
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B, got {text!r}") from None
    return a, b


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


TRAIN_FLAGS = ("lr", "iterations", "micro_batch", "accum_steps", "lambda_fa", "lambda_h", "huber_delta",
               "alignment_location", "target_mode", "checkpoint_every", "weight_decay")


def resolve_config(args, stage=None, base=None):
    """Built-in defaults (or ``base``) < config file < --set KEY=VALUE < dedicated flags."""
    cfg = base or TrainConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ParseError(path, "config file not found")
        cfg = TrainConfig.from_text(path.read_text(), cfg, path=path)
    cfg = TrainConfig.from_mapping(dict(getattr(args, "set", None) or []), cfg)
    upd = {k: getattr(args, k) for k in TRAIN_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "seed", None) is not None:
        upd["seed"] = args.seed
    if stage is not None:
        upd["stage"] = stage
    return dataclasses.replace(cfg, **upd)


def _read_image(path, factor, resize):
    path = Path(path)
    if not path.is_file():
        raise ParseError(path, "image not found")
    if path.suffix.lower() in (".ppm", ".pnm"):
        rgb = read_ppm(path)
    else:
        import matplotlib.image as mpimg

        try:
            rgb = np.asarray(mpimg.imread(path), dtype=np.float32)
        except (OSError, ValueError, SyntaxError) as exc:
            raise ParseError(path, f"unreadable image ({exc})") from None
        if rgb.dtype != np.float32 or rgb.max() > 1.0:
            rgb = rgb / 255.0
        if rgb.ndim == 2:
            rgb = np.repeat(rgb[..., None], 3, -1)
        rgb = rgb[..., :3]
    h, w = rgb.shape[:2]
    if h % factor or w % factor:
        if not resize:
            raise ShapeError(f"{path}: {h}x{w} is not divisible by {factor}; pass --resize to resample")
        nh, nw = max(factor, round(h / factor) * factor), max(factor, round(w / factor) * factor)
        warnings.warn(f"resizing {path} from {h}x{w} to {nh}x{nw}", RuntimeWarning, stacklevel=2)
        t = torch.from_numpy(rgb).permute(2, 0, 1)[None]
        rgb = F.interpolate(t, size=(nh, nw), mode="bilinear", align_corners=False)[0].permute(1, 2, 0).numpy()
    return np.ascontiguousarray(rgb, dtype=np.float32)


# --------------------------------------------------------------------------- commands


def cmd_gen_data(args):
    out = _out(args)
    seed = args.seed if args.seed is not None else 0
    size = (args.size, args.size)
    ratios = _ratio(args.ratio)
    for split, n, s in (("train", args.n_train, seed), ("val", args.n_val, seed + 1)):
        if n > 0:
            write_split(generate_split(n, s, size, ratios, args.sparse), out, split)
    print(f"wrote {args.n_train} train / {args.n_val} val samples under {out}")


def cmd_train_codec(args):
    out = _out(args)
    train = _load_split(args.data_dir, "train")
    seed = args.seed if args.seed is not None else 0
    codec, losses = train_codec(train, iterations=args.iterations, lr=args.lr, seed=seed, log_every=0)
    save_codec(codec, out / "codec.ckpt")
    report = {"final_loss": losses[-1], "iterations": args.iterations, "seed": seed}
    val_dir = Path(args.data_dir) / "val"
    if val_dir.is_dir():
        report["reconstruction"] = reconstruction_eval(codec, _load_split(args.data_dir, "val"))
    write_json(out / "codec_report.json", report)
    print(json.dumps(report.get("reconstruction", report), sort_keys=True))


def _stage_base(src, stage):
    """Config carried over from a checkpoint; stage-specific knobs fall back to their defaults."""
    if src.cfg.stage == stage:
        return src.cfg
    return dataclasses.replace(src.cfg, stage=stage, lr=None, iterations=None, latent_loss=None,
                               pixel_loss=None, huber_loss=None, enhancer=None)


def cmd_train(args):
    out = _out(args)
    train = _load_split(args.data_dir, "train")
    val = None
    if not args.no_val and (Path(args.data_dir) / "val").is_dir():
        val = _load_split(args.data_dir, "val")
    src = None
    if args.resume or (args.stage == 2 and args.init):
        src = load_checkpoint(_existing(args.resume or args.init))
    cfg = resolve_config(args, args.stage, _stage_base(src, args.stage) if src else None).resolved()
    (out / "config.resolved").write_text(cfg.to_text())
    if args.stage == 1:
        if not args.codec and not src:
            raise ConfigurationError("stage 1 needs --codec")
        codec = src.codec if src else load_codec(_existing(args.codec))
        encoder = build_encoder(cfg, train[0].depth.shape[0], args.features)
        data = TrainingSet(train, codec, cfg.target_mode, encoder, cfg.p_lo, cfg.p_hi)
        st = train_stage1(codec, data, cfg, encoder, out, val, resume=src)
    else:
        if src is None:
            raise ConfigurationError("stage 2 needs --init STAGE1_CKPT (or --resume)")
        data = TrainingSet(train, src.codec, cfg.target_mode, None, cfg.p_lo, cfg.p_hi)
        if args.resume:
            st = train_stage2(None, data, cfg, out, val, resume=src)
        else:
            st = train_stage2(src, data, cfg, out, val)
    summary = {"stage": cfg.stage, "step": st.step, "checkpoint": str(out / "last.ckpt")}
    if val:
        summary["val"] = evaluate_model(st.model, st.codec, val, st.ref_params, st.cfg)["all"].summary()
    print(json.dumps(summary, sort_keys=True))


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise ParseError(p, "file not found")
    return p


def _load_predictions(pred_dir, samples):
    root = Path(pred_dir)
    preds = []
    for s in samples:
        for cand in (root / f"{s.sample_id}.pfm", root / s.sample_id / "depth.pfm"):
            if cand.is_file():
                preds.append(read_pfm(cand))
                break
        else:
            raise ParseError(root / f"{s.sample_id}.pfm", "missing prediction")
    return preds


def cmd_eval(args):
    out = _out(args)
    samples = _load_split(args.data_dir, args.split)
    if args.pred_dir:
        preds = _load_predictions(args.pred_dir, samples)
        if args.space == "target":
            raise UsageError("eval: --space target needs --ckpt")
        reports = evaluate_predictions(preds, samples, args.space, "", args.split)
    else:
        if not args.ckpt:
            raise ConfigurationError("eval needs --ckpt or --pred-dir")
        st = load_checkpoint(_existing(args.ckpt))
        cfg = dataclasses.replace(st.cfg, eval_space=args.space)
        reports = evaluate_model(st.model, st.codec, samples, st.ref_params, cfg, k=args.iterative,
                                 dataset=args.split)
        for rep in reports.values():
            rep.config_hash = st.meta["config_hash"]
    if reports["all"].n_samples == 0:
        raise ConfigurationError("no sample could be evaluated")
    (out / "metrics.json").write_text(reports["all"].to_json() + "\n")
    for name, rep in reports.items():
        if name != "all":
            (out / f"metrics_{name}.json").write_text(rep.to_json() + "\n")
    print(json.dumps({k: v.summary() for k, v in reports.items()}, sort_keys=True))


def cmd_infer(args):
    out = _out(args)
    st = load_checkpoint(_existing(args.ckpt))
    if args.iterative < 1:
        raise ConfigurationError("--iterative must be >= 1")
    rgb = _read_image(args.image, st.codec.factor * st.model.stride, args.resize)
    x = torch.from_numpy(2.0 * rgb - 1.0).permute(2, 0, 1)[None]
    pred = predict_normalized(st.model, st.codec, x, k=args.iterative)[0].numpy()
    depth = normalized_to_depth(pred, st.ref_params, st.cfg.target_mode).astype(np.float32)
    write_pfm(out / "depth.pfm", depth)
    plotting.save_preview(depth, out / "preview.png")
    st.ref_params.save(out / "norm.txt")
    print(f"wrote {out / 'depth.pfm'}")


def cmd_ablate(args):
    out = _out(args)
    cfg = resolve_config(args, 1)
    train = _load_split(args.data_dir, "train")
    val = _load_split(args.data_dir, "val")
    codec = load_codec(_existing(args.codec))
    encoder = build_encoder(cfg.resolved(), train[0].depth.shape[0], args.features)
    rows = ablation.run_ablation(args.suite, cfg, codec, train, val, out, encoder, args.it1, args.it2)
    plotting.plot_ablation_table(rows, out / f"{args.suite}.png", title=args.suite)
    print((out / f"{args.suite}.md").read_text())


def cmd_plot(args):
    out = _out(args)
    src = Path(args.input)
    if not src.exists():
        raise ParseError(src, "input not found")
    name = args.name or args.kind.replace("-", "_")
    path = out / f"{name}.{args.format}"
    if args.kind == "histogram":
        samples = _load_split(src, args.split) if src.is_dir() else [read_sample(src)]
        if args.domain != "all":
            samples = [s for s in samples if s.domain_tag.value == args.domain]
        stats = plotting.plot_histogram(samples, path)
        write_json(out / f"{name}_entropy.json", stats)
    elif args.kind == "ablation-table":
        plotting.plot_ablation_table(ablation.read_table(src), path, title=src.stem)
    else:
        plotting.plot_loss_curve(read_log(src), path)
    print(f"wrote {path}")


def cmd_ingest(args):
    out = _out(args)
    rows = ingest_features(args.data_dir, args.n_tokens, args.dim, out)
    print(f"indexed {len(rows)} feature files into {out / 'index.txt'}")


# --------------------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="latentdepth", description="Single-step latent depth estimation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True, seed=True, config=False):
        sp.add_argument("--out-dir", required=True, help="every output of the command goes here")
        if data:
            sp.add_argument("--data-dir", required=True, help="dataset root holding train/ and val/ splits")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="random seed")
        if config:
            sp.add_argument("--config", help="flat key=value TrainConfig file")
            sp.add_argument("--set", type=_kv, action="append", metavar="KEY=VALUE",
                            help="override one config key (repeatable)")

    g = sub.add_parser("gen-data", help="render a procedural dataset")
    common(g, data=False)
    g.add_argument("--n-train", type=int, default=512)
    g.add_argument("--n-val", type=int, default=64)
    g.add_argument("--size", type=int, default=64, help="square image side, multiple of 16 for training")
    g.add_argument("--ratio", default="9:1", help="indoor:outdoor mixing ratio")
    g.add_argument("--sparse", action="store_true", help="keep only 20%% of depth pixels valid")
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("train-codec", help="fit the image/depth autoencoder")
    common(c)
    c.add_argument("--iterations", type=int, default=2000)
    c.add_argument("--lr", type=float, default=2e-3)
    c.set_defaults(func=cmd_train_codec)

    t = sub.add_parser("train", help="run stage 1 or stage 2 of the curriculum")
    common(t, config=True)
    t.add_argument("--stage", type=int, choices=(1, 2), required=True)
    t.add_argument("--codec", help="codec checkpoint (stage 1; stage 2 reuses the one stored in --init)")
    t.add_argument("--init", help="stage-1 checkpoint to start stage 2 from")
    t.add_argument("--resume", help="checkpoint of this stage to continue from")
    t.add_argument("--features", help="directory of ingested .feat files (default: built-in encoder)")
    t.add_argument("--no-val", action="store_true", help="skip validation / best.ckpt tracking")
    t.add_argument("--lr", type=float)
    t.add_argument("--iterations", type=int)
    t.add_argument("--micro-batch", dest="micro_batch", type=int)
    t.add_argument("--accum-steps", dest="accum_steps", type=int)
    t.add_argument("--lambda-fa", dest="lambda_fa", type=float)
    t.add_argument("--lambda-h", dest="lambda_h", type=float)
    t.add_argument("--huber-delta", dest="huber_delta", type=float)
    t.add_argument("--alignment-location", dest="alignment_location", choices=("D1", "D2", "Mid"))
    t.add_argument("--target-mode", dest="target_mode", choices=("depth", "disparity", "sqrt_disparity"))
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="affine-aligned metrics of a checkpoint or of saved predictions")
    common(e, seed=False)
    e.add_argument("--ckpt", help="denoiser checkpoint")
    e.add_argument("--pred-dir", help="precomputed predictions: <id>.pfm or <id>/depth.pfm")
    e.add_argument("--split", default="val")
    e.add_argument("--space", choices=("depth", "disparity", "sqrt_disparity", "target"), default="depth",
                   help="alignment space; target = the checkpoint's target mode")
    e.add_argument("--iterative", type=int, default=1, help="U-Net passes per prediction")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict depth for one image")
    common(i, data=False)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--image", required=True, help="PPM or PNG image")
    i.add_argument("--iterative", type=int, default=1, help="U-Net passes (1 = single step)")
    i.add_argument("--resize", action="store_true", help="resample images whose sides are not multiples of 16")
    i.set_defaults(func=cmd_infer)

    a = sub.add_parser("ablate", help="train and evaluate an ablation suite")
    common(a, config=True)
    a.add_argument("--suite", choices=ablation.SUITES, required=True)
    a.add_argument("--codec", required=True)
    a.add_argument("--features")
    a.add_argument("--it1", type=int, default=None, help="stage-1 steps per row (default 4000)")
    a.add_argument("--it2", type=int, default=None, help="stage-2 steps per row (default 2000)")
    a.set_defaults(func=cmd_ablate)

    pl = sub.add_parser("plot", help="render a figure")
    common(pl, data=False, seed=False)
    pl.add_argument("kind", choices=plotting.PLOT_KINDS)
    pl.add_argument("--input", required=True, help="dataset dir, ablation CSV or run.log")
    pl.add_argument("--split", default="train")
    pl.add_argument("--domain", default="all", choices=("all", "indoor_like", "outdoor_like"))
    pl.add_argument("--format", default="png", choices=("png", "svg"))
    pl.add_argument("--name", help="output file stem")
    pl.set_defaults(func=cmd_plot)

    f = sub.add_parser("ingest-features", help="validate and index external token features")
    common(f, seed=False)
    f.add_argument("--n-tokens", type=int)
    f.add_argument("--dim", type=int)
    f.set_defaults(func=cmd_ingest)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LatentDepthError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
