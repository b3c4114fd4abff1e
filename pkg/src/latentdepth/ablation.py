"""Ablation suites: target preprocessing, feature-alignment location, detail preservation."""

from __future__ import annotations

import csv
import dataclasses
import logging
from pathlib import Path

from .errors import ConfigurationError
from .trainer import (
    TrainConfig,
    TrainingSet,
    TrainState,
    build_model,
    build_projector,
    evaluate_model,
    train,
    train_stage1,
    train_stage2,
)

log = logging.getLogger(__name__)

SUITES = ("preprocess", "fa_location", "detail")
PREPROCESS_ROWS = ("depth", "disparity", "sqrt_disparity")
FA_ROWS = ("baseline", "D1", "D2", "Mid")
# name -> (pixel, L_h, FE, two-stage)
DETAIL_ROWS = {
    "M.Base": (False, False, False, False),
    "M.Pixel": (True, False, False, False),
    "M.Huber": (True, True, False, False),
    "M.FE_Huber": (True, True, True, False),
    "M.Full": (True, True, True, True),
}
DETAIL_FLAGS = ("pixel", "L_h", "FE", "two_stage")


def _metrics(model, codec, ref, cfg, val_samples, extra_spaces=()):
    """``split/metric`` columns in the configured space, ``split/metric@space`` for extra spaces."""
    out = {}
    for space in (None, *extra_spaces):
        c = cfg if space is None else dataclasses.replace(cfg, eval_space=space)
        tag = "" if space is None else f"@{space}"
        for split, rep in evaluate_model(model, codec, val_samples, ref, c).items():
            for k in ("abs_rel", "delta1", "edge_f1"):
                out[f"{split}/{k}{tag}"] = rep.__dict__[k]
    return out


def _detail_row(name, flags, base_cfg, codec, train_samples, val_samples, encoder, it1, it2, out):
    pixel, huber, fe, two_stage = flags
    s1_cfg = dataclasses.replace(base_cfg, stage=1, iterations=it1 if two_stage else it1 + it2)
    data = TrainingSet(train_samples, codec, base_cfg.target_mode, encoder, base_cfg.p_lo, base_cfg.p_hi)
    if two_stage:
        st = train_stage1(codec, data, s1_cfg, encoder, out / "stage1")
        s2_cfg = dataclasses.replace(base_cfg, stage=2, iterations=it2, pixel_loss=pixel,
                                     huber_loss=huber, enhancer=fe)
        st = train_stage2(st, data, s2_cfg, out / "stage2")
    else:
        s1_cfg = dataclasses.replace(s1_cfg, pixel_loss=pixel, huber_loss=huber)
        model = None
        if fe:
            model = build_model(s1_cfg.resolved())
            model.attach_enhancer()
        st = _train_stage1_with(model, codec, data, s1_cfg, encoder, out / "stage1")
    return st, data


def _train_stage1_with(model, codec, data, cfg, encoder, out):
    if model is None:
        return train_stage1(codec, data, cfg, encoder, out)
    # single-stage rows that carry the enhancer from the start
    cfg = dataclasses.replace(cfg, stage=1).resolved()
    projector = None
    if cfg.lambda_fa > 0 and encoder is not None:
        projector = build_projector(cfg, model, tuple(data.rgb.shape[-2:]))
    st = TrainState(model, codec, cfg, data.ref_params, projector)
    return train(st, data, out, encoder)


def run_ablation(suite, base_cfg: TrainConfig, codec, train_samples, val_samples, out_dir,
                 encoder=None, it1=None, it2=None):
    """Train and evaluate every row of a suite; writes ``<suite>.csv`` and ``<suite>.md``.

    Returns the list of row dicts (``row`` label first, then metrics per eval split).
    """
    if suite not in SUITES:
        raise ConfigurationError(f"unknown ablation suite {suite!r}; expected one of {SUITES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    it1 = it1 if it1 is not None else (base_cfg.iterations or 4000)
    it2 = it2 if it2 is not None else 2000
    rows = []
    if suite == "preprocess":
        for mode in PREPROCESS_ROWS:
            cfg = dataclasses.replace(base_cfg, stage=1, iterations=it1, target_mode=mode)
            data = TrainingSet(train_samples, codec, mode, encoder, cfg.p_lo, cfg.p_hi)
            st = train_stage1(codec, data, cfg, encoder, out / mode)
            # target modes are also compared with each model aligned in its own prediction space
            metrics = _metrics(st.model, codec, st.ref_params, st.cfg, val_samples, ("target",))
            rows.append({"row": mode} | metrics)
    elif suite == "fa_location":
        for loc in FA_ROWS:
            if loc == "baseline":
                cfg = dataclasses.replace(base_cfg, stage=1, iterations=it1, lambda_fa=0.0)
            else:
                cfg = dataclasses.replace(base_cfg, stage=1, iterations=it1, alignment_location=loc)
            data = TrainingSet(train_samples, codec, cfg.target_mode, encoder, cfg.p_lo, cfg.p_hi)
            st = train_stage1(codec, data, cfg, encoder, out / loc)
            rows.append({"row": loc} | _metrics(st.model, codec, st.ref_params, st.cfg, val_samples))
    else:
        for name, flags in DETAIL_ROWS.items():
            st, _ = _detail_row(name, flags, base_cfg, codec, train_samples, val_samples, encoder,
                                it1, it2, out / name.replace(".", "_"))
            row = {"row": name} | dict(zip(DETAIL_FLAGS, flags))
            rows.append(row | _metrics(st.model, codec, st.ref_params, st.cfg, val_samples))
    write_table(rows, out / f"{suite}.csv", out / f"{suite}.md")
    return rows


def write_table(rows, csv_path, md_path=None):
    cols = list(rows[0].keys())
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    if md_path:
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for r in rows:
            lines.append("| " + " | ".join(_fmt(r[c]) for c in cols) + " |")
        Path(md_path).write_text("\n".join(lines) + "\n")


def read_table(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _fmt(v):
    if isinstance(v, bool):
        return "x" if v else ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
