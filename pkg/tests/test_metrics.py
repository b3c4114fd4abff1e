import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentdepth.errors import DegenerateError, NumericalError
from latentdepth.metrics import (
    EDGE_THRESHOLDS,
    MetricsReport,
    abs_rel,
    affine_align,
    aggregate,
    config_hash,
    delta1,
    edge_f1,
    evaluate_sample,
    fit_scale_shift,
)

from oracles import abs_rel_loop, delta1_loop, scale_shift_loop


def _gt(rng, shape=(16, 16)):
    return rng.uniform(0.5, 20.0, size=shape)


def test_align_exact_affine(rng):
    gt = _gt(rng)
    s, t, aligned = affine_align(2 * gt + 3, gt)
    assert s == pytest.approx(0.5, abs=1e-10)
    assert t == pytest.approx(-1.5, abs=1e-9)
    assert abs_rel(aligned, gt) <= 1e-6


def test_align_identity(rng):
    gt = _gt(rng)
    s, t, _ = affine_align(gt, gt)
    assert abs(s - 1) < 1e-9 and abs(t) < 1e-9


def test_align_matches_normal_equations(rng):
    gt = _gt(rng)
    pred = 0.3 * gt + rng.normal(scale=0.5, size=gt.shape) + 1
    mask = rng.random(gt.shape) > 0.3
    s, t, _ = affine_align(pred, gt, mask)
    s_ref, t_ref = scale_shift_loop(pred[mask], gt[mask])
    assert s == pytest.approx(s_ref, rel=1e-8)
    assert t == pytest.approx(t_ref, rel=1e-8, abs=1e-10)


def test_align_constant_prediction_degenerate(rng):
    with pytest.raises(DegenerateError):
        affine_align(np.ones((8, 8)), _gt(rng, (8, 8)))


def test_align_floor():
    gt = np.linspace(1, 2, 16).reshape(4, 4)
    pred = -gt
    _, _, aligned = affine_align(pred, gt)
    assert aligned.min() >= 1e-3


def test_disparity_space_alignment_exact():
    gt = np.linspace(1, 5, 64).reshape(8, 8)
    pred = 1.0 / (3.0 / gt + 0.2)  # affine in disparity
    _, _, aligned = affine_align(pred, gt, space="disparity")
    assert abs_rel(aligned, gt) < 1e-8


def test_sqrt_disparity_space_alignment_exact():
    gt = np.linspace(1, 80, 64).reshape(8, 8)
    pred = 1.0 / (0.5 / np.sqrt(gt) + 0.3) ** 2  # affine in 1/sqrt(depth)
    s, t, aligned = affine_align(pred, gt, space="sqrt_disparity")
    assert abs_rel(aligned, gt) < 1e-8
    assert s == pytest.approx(2.0) and t == pytest.approx(-0.6)
    with pytest.raises(ValueError):
        affine_align(pred, gt, space="log")


def test_abs_rel_values(rng):
    gt = _gt(rng)
    assert abs_rel(gt, gt) == 0.0
    assert abs_rel(1.1 * gt, gt) == pytest.approx(10.0)


def test_abs_rel_and_delta1_match_loops(rng):
    gt = _gt(rng, (12, 10))
    pred = gt * rng.uniform(0.6, 1.6, size=gt.shape)
    mask = rng.random(gt.shape) > 0.25
    assert abs_rel(pred, gt, mask) == pytest.approx(abs_rel_loop(pred, gt, mask), rel=1e-9)
    # identical hit counts; only the division order differs
    assert delta1(pred, gt, mask) == pytest.approx(delta1_loop(pred, gt, mask), rel=1e-12)


def test_delta1_strict_boundary():
    gt = np.array([[1.0, 2.0], [4.0, 8.0]])
    pred = gt.copy()
    pred[0, 0] = 1.25
    assert delta1(gt, gt) == 100.0
    assert delta1(pred, gt) == 75.0


def test_delta1_nonpositive_counts_as_failure():
    gt = np.ones((2, 2))
    pred = np.array([[1.0, -1.0], [0.0, 1.0]])
    assert delta1(pred, gt) == 50.0


def test_empty_mask_errors():
    gt = np.ones((3, 3))
    m = np.zeros((3, 3), dtype=bool)
    with pytest.raises(DegenerateError):
        abs_rel(gt, gt, m)
    with pytest.raises(DegenerateError):
        delta1(gt, gt, m)


def _step(col, h=16, w=24):
    d = np.full((h, w), 10.0)
    d[:, col:] = 2.0
    return d


def test_edge_f1_identity_and_constant(rng):
    gt = _gt(rng)
    assert edge_f1(gt, gt) == 1.0
    assert edge_f1(np.full((8, 8), 3.0), np.full((8, 8), 5.0)) == 1.0


def test_edge_f1_far_edges_zero():
    assert edge_f1(_step(4), _step(14)) == 0.0


def test_edge_f1_tolerance_radius_one():
    assert edge_f1(_step(8), _step(9)) == 1.0
    assert edge_f1(_step(8), _step(10)) == 0.0


def test_edge_f1_non_finite():
    d = np.ones((4, 4))
    d[0, 0] = np.nan
    with pytest.raises(NumericalError):
        edge_f1(d, np.ones((4, 4)))


@given(seed=st.integers(0, 10_000))
def test_edge_f1_symmetric(seed):
    r = np.random.default_rng(seed)
    a = r.uniform(1, 5, size=(10, 10))
    b = a + r.normal(scale=0.5, size=a.shape)
    b = np.abs(b) + 0.5
    assert edge_f1(a, b) == pytest.approx(edge_f1(b, a), abs=1e-12)


@given(seed=st.integers(0, 10_000), a=st.floats(0.05, 50), b=st.floats(-20, 20))
def test_affine_invariance(seed, a, b):
    r = np.random.default_rng(seed)
    gt = r.uniform(1, 10, size=(8, 8))
    pred = gt + r.normal(scale=1.0, size=gt.shape)
    _, _, al1 = affine_align(pred, gt)
    _, _, al2 = affine_align(a * pred + b, gt)
    assert abs(abs_rel(al1, gt) - abs_rel(al2, gt)) <= 1e-9 * max(1.0, abs_rel(al1, gt))


def test_delta1_monotone_degradation_trend():
    amps = [0.0, 0.5, 1.0, 2.0, 4.0]
    means = []
    for amp in amps:
        vals = []
        for seed in range(20):
            r = np.random.default_rng(seed)
            gt = r.uniform(2, 10, size=(24, 24))
            pred = gt + amp * r.normal(size=gt.shape)
            _, _, al = affine_align(pred, gt)
            vals.append(delta1(al, gt))
        means.append(np.mean(vals))
    assert all(x >= y for x, y in zip(means, means[1:]))


def test_report_ranges_and_json(rng):
    rows = []
    for i in range(3):
        gt = _gt(rng)
        row = evaluate_sample(gt + rng.normal(scale=0.3, size=gt.shape), gt)
        row["id"] = f"s{i}"
        rows.append(row)
    rep = aggregate("val", rows, "depth", config_hash("x"))
    assert 0 <= rep.delta1 <= 100 and rep.abs_rel >= 0 and 0 <= rep.edge_f1 <= 1
    d = json.loads(rep.to_json())
    for key in ("dataset", "n_samples", "abs_rel", "delta1", "edge_f1", "config_hash", "alignment_mode"):
        assert key in d
    assert d["edge_config"]["thresholds"] == list(EDGE_THRESHOLDS)
    assert rep.to_json() == aggregate("val", rows, "depth", config_hash("x")).to_json()


def test_fit_scale_shift_requires_two_points():
    with pytest.raises(DegenerateError):
        fit_scale_shift([1.0], [2.0])


def test_empty_report():
    rep = MetricsReport("x")
    assert rep.n_samples == 0 and np.isnan(rep.abs_rel)
