import json
import subprocess
import sys

import numpy as np
import pytest

from latentdepth.alignment import write_feature_file
from latentdepth.cli import main, resolve_config, build_parser
from latentdepth.dataio import read_pfm, write_ppm
from latentdepth.trainer import TrainConfig, load_checkpoint


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """Tiny dataset, codec, stage-1 and stage-2 checkpoints produced through the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert run("gen-data", "--out-dir", data, "--n-train", 8, "--n-val", 4, "--size", 32, "--seed", 3) == 0
    assert run("train-codec", "--out-dir", root / "codec", "--data-dir", data, "--iterations", 20) == 0
    small = ("--micro-batch", 4, "--accum-steps", 1, "--checkpoint-every", 5)
    assert run("train", "--stage", 1, "--out-dir", root / "s1", "--data-dir", data,
               "--codec", root / "codec" / "codec.ckpt", "--iterations", 6, *small) == 0
    assert run("train", "--stage", 2, "--out-dir", root / "s2", "--data-dir", data,
               "--init", root / "s1" / "last.ckpt", "--iterations", 3, *small) == 0
    return root


def test_outputs_of_training(ws):
    for name in ("run.log", "config.resolved", "last.ckpt", "best.ckpt"):
        assert (ws / "s1" / name).is_file() and (ws / "s2" / name).is_file()
    assert json.loads((ws / "codec" / "codec_report.json").read_text())["iterations"] == 20
    s2 = load_checkpoint(ws / "s2" / "last.ckpt")
    assert s2.cfg.stage == 2 and s2.cfg.lr == 3e-6 and s2.step == 3
    assert s2.model.enhancer is not None


def test_missing_checkpoint_exit_2(tmp_path, capsys, ws):
    img = tmp_path / "x.ppm"
    write_ppm(img, np.zeros((32, 32, 3)))
    assert run("infer", "--out-dir", tmp_path / "o", "--ckpt", tmp_path / "nope.ckpt", "--image", img) == 2
    assert "nope.ckpt" in capsys.readouterr().err


def test_usage_errors_exit_1(tmp_path):
    assert run("plot", "bogus", "--out-dir", tmp_path, "--input", tmp_path) == 1
    assert run("train", "--out-dir", tmp_path) == 1
    assert run("frobnicate") == 1


def test_console_script_exit_codes(tmp_path):
    r = subprocess.run([sys.executable, "-m", "latentdepth.cli", "plot", "bogus", "--out-dir", str(tmp_path),
                        "--input", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 1 and "usage error" in r.stderr
    r = subprocess.run([sys.executable, "-m", "latentdepth.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "ingest-features" in r.stdout


def test_eval_gt_against_itself(ws, tmp_path):
    data = ws / "data"
    assert run("eval", "--out-dir", tmp_path, "--data-dir", data, "--pred-dir", data / "val") == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["abs_rel"] == pytest.approx(0.0, abs=1e-9)
    assert rep["delta1"] == 100.0 and rep["edge_f1"] == pytest.approx(1.0)
    assert rep["n_samples"] == 4


def test_eval_deterministic_and_hash(ws, tmp_path):
    for d in ("a", "b"):
        assert run("eval", "--out-dir", tmp_path / d, "--data-dir", ws / "data",
                   "--ckpt", ws / "s1" / "last.ckpt") == 0
    a, b = (tmp_path / "a" / "metrics.json").read_bytes(), (tmp_path / "b" / "metrics.json").read_bytes()
    assert a == b
    meta = load_checkpoint(ws / "s1" / "last.ckpt").meta
    assert json.loads(a)["config_hash"] == meta["config_hash"]
    assert list(tmp_path.glob("a/metrics_*.json"))


def test_eval_target_space(ws, tmp_path):
    assert run("eval", "--out-dir", tmp_path / "t", "--data-dir", ws / "data", "--ckpt", ws / "s1" / "last.ckpt",
               "--space", "target") == 0
    assert json.loads((tmp_path / "t" / "metrics.json").read_text())["alignment_mode"] == "sqrt_disparity"
    assert run("eval", "--out-dir", tmp_path / "p", "--data-dir", ws / "data", "--pred-dir", ws / "data" / "val",
               "--space", "target") == 1


def test_eval_no_samples_exit_2(tmp_path):
    (tmp_path / "empty" / "val").mkdir(parents=True)
    assert run("eval", "--out-dir", tmp_path / "o", "--data-dir", tmp_path / "empty",
               "--pred-dir", tmp_path / "empty") == 2


def test_infer_deterministic_and_iterative_default(ws, tmp_path):
    img = next((ws / "data" / "val").iterdir()) / "rgb.ppm"
    ck = ws / "s2" / "last.ckpt"
    assert run("infer", "--out-dir", tmp_path / "a", "--ckpt", ck, "--image", img) == 0
    assert run("infer", "--out-dir", tmp_path / "b", "--ckpt", ck, "--image", img, "--seed", 0) == 0
    assert run("infer", "--out-dir", tmp_path / "c", "--ckpt", ck, "--image", img, "--iterative", 1) == 0
    assert run("infer", "--out-dir", tmp_path / "d", "--ckpt", ck, "--image", img, "--iterative", 4) == 0
    blobs = [(tmp_path / d / "depth.pfm").read_bytes() for d in "abc"]
    assert blobs[0] == blobs[1] == blobs[2]
    for name in ("preview.png", "norm.txt"):
        assert (tmp_path / "a" / name).is_file()
    assert read_pfm(tmp_path / "d" / "depth.pfm").shape == (32, 32)


def test_infer_size_contract(ws, tmp_path):
    img = tmp_path / "odd.ppm"
    write_ppm(img, np.random.default_rng(0).random((31, 43, 3)))
    ck = ws / "s1" / "last.ckpt"
    assert run("infer", "--out-dir", tmp_path / "a", "--ckpt", ck, "--image", img) == 2
    with pytest.warns(RuntimeWarning):
        assert run("infer", "--out-dir", tmp_path / "b", "--ckpt", ck, "--image", img, "--resize") == 0
    assert read_pfm(tmp_path / "b" / "depth.pfm").shape == (32, 48)


def test_plots(ws, tmp_path):
    assert run("plot", "histogram", "--out-dir", tmp_path, "--input", ws / "data", "--split", "val") == 0
    stats = json.loads((tmp_path / "histogram_entropy.json").read_text())
    assert set(stats) == {"depth", "disparity", "sqrt_disparity"}
    assert run("plot", "loss-curve", "--out-dir", tmp_path, "--input", ws / "s1" / "run.log",
               "--format", "svg") == 0
    assert (tmp_path / "loss_curve.svg").is_file()
    rows = "row,all/abs_rel\n" + "".join(f"M.{n},{i}.0\n" for i, n in enumerate(
        ["Base", "Pixel", "Huber", "FE_Huber", "Full"]))
    (tmp_path / "detail.csv").write_text(rows)
    assert run("plot", "ablation-table", "--out-dir", tmp_path, "--input", tmp_path / "detail.csv") == 0
    assert (tmp_path / "ablation_table.png").stat().st_size > 0


def test_plot_empty_report_exit_2(tmp_path):
    (tmp_path / "empty.csv").write_text("row,all/abs_rel\n")
    assert run("plot", "ablation-table", "--out-dir", tmp_path, "--input", tmp_path / "empty.csv") == 2
    assert run("plot", "loss-curve", "--out-dir", tmp_path, "--input", tmp_path / "missing.log") == 2


def test_plot_byte_identical(ws, tmp_path):
    for d in ("a", "b"):
        assert run("plot", "histogram", "--out-dir", tmp_path / d, "--input", ws / "data") == 0
    assert (tmp_path / "a" / "histogram.png").read_bytes() == (tmp_path / "b" / "histogram.png").read_bytes()


def test_ingest_features(tmp_path):
    src = tmp_path / "feats"
    src.mkdir()
    for i in range(2):
        write_feature_file(src / f"s{i}.feat", f"s{i}", np.ones((16, 8)))
    before = sorted(p.name for p in src.iterdir())
    assert run("ingest-features", "--out-dir", tmp_path / "out", "--data-dir", src, "--n-tokens", 16,
               "--dim", 8) == 0
    assert (tmp_path / "out" / "index.txt").read_text().count("\n") == 3
    assert sorted(p.name for p in src.iterdir()) == before
    assert run("ingest-features", "--out-dir", tmp_path / "bad", "--data-dir", src, "--dim", 9) == 2


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.txt"
    cfg_file.write_text("lr=0.001\nlambda_fa=0.5\nseed=4\n")
    parser = build_parser()
    args = parser.parse_args(["train", "--stage", "1", "--out-dir", "o", "--data-dir", "d",
                              "--config", str(cfg_file), "--set", "lambda_fa=0.25", "--set", "lr=0.002",
                              "--lr", "0.003"])
    cfg = resolve_config(args, 1)
    assert (cfg.lr, cfg.lambda_fa, cfg.seed) == (0.003, 0.25, 4)
    assert cfg.huber_delta == TrainConfig().huber_delta
    args = parser.parse_args(["train", "--stage", "1", "--out-dir", "o", "--data-dir", "d", "--seed", "9",
                              "--config", str(cfg_file)])
    assert resolve_config(args, 1).seed == 9


def test_train_writes_resolved_config(ws):
    text = (ws / "s1" / "config.resolved").read_text()
    cfg = TrainConfig.from_text(text)
    assert cfg.iterations == 6 and cfg.micro_batch == 4 and cfg.lr == 3e-5


def test_resume_through_cli(ws, tmp_path):
    small = ("--micro-batch", 4, "--accum-steps", 1, "--checkpoint-every", 5)
    assert run("train", "--stage", 1, "--out-dir", tmp_path, "--data-dir", ws / "data", "--no-val",
               "--resume", ws / "s1" / "last.ckpt", "--iterations", 8, *small) == 0
    assert load_checkpoint(tmp_path / "last.ckpt").step == 8
