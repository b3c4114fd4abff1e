import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latentdepth.dataio import generate_split
from latentdepth.errors import DegenerateError, DomainError, ParseError
from latentdepth.preprocess import (
    NormParams,
    TargetMode,
    denormalize,
    depth_to_target,
    entropy,
    normalize_percentile,
    prepare_target,
    target_histogram,
    target_to_depth,
)

ONE = np.ones((1, 1), dtype=bool)


@pytest.mark.parametrize("mode,expected", [("sqrt_disparity", 0.5), ("disparity", 0.25), ("depth", 4.0)])
def test_depth_to_target_values(mode, expected):
    assert depth_to_target(np.array([[4.0]]), ONE, mode)[0, 0] == expected


def test_invalid_pixels_pass_through():
    d = np.array([[4.0, -1.0]])
    m = np.array([[True, False]])
    out = depth_to_target(d, m, "disparity")
    assert out[0, 0] == 0.25 and out[0, 1] == -1.0


def test_nonpositive_valid_depth_raises():
    with pytest.raises(DomainError):
        depth_to_target(np.array([[0.0]]), ONE, "sqrt_disparity")


@pytest.mark.parametrize("mode,t,expected", [("sqrt_disparity", 0.5, 4.0), ("disparity", 0.25, 4.0),
                                             ("depth", 4.0, 4.0)])
def test_target_to_depth_values(mode, t, expected):
    assert target_to_depth(np.array([[t]]), mode)[0, 0] == pytest.approx(expected)


def test_target_to_depth_nonpositive():
    with pytest.raises(DomainError):
        target_to_depth(np.array([[0.0, 1.0]]), "disparity")
    depth, ok = target_to_depth(np.array([[-0.5, 1.0]]), "sqrt_disparity", mask=np.ones((1, 2), bool))
    assert ok.tolist() == [[False, True]] and np.isnan(depth[0, 0])


def test_normalize_linspace_midpoint():
    x = np.linspace(0, 100, 101).reshape(1, -1)
    norm, params = normalize_percentile(x, np.ones_like(x, dtype=bool))
    # sort-based oracle for the 2nd / 98th percentiles (linear interpolation)
    s = np.sort(x.ravel())
    lo_ref = s[0] + 0.02 * (len(s) - 1) * (s[1] - s[0])
    hi_ref = s[0] + 0.98 * (len(s) - 1) * (s[1] - s[0])
    assert params.lo == pytest.approx(lo_ref) and params.hi == pytest.approx(hi_ref)
    assert abs(norm[0, 50]) <= 1e-6
    assert norm[0, 2] == pytest.approx(-1.0) and norm[0, 98] == pytest.approx(1.0)


def test_normalize_constant_raises():
    x = np.full((4, 4), 3.0)
    with pytest.raises(DegenerateError):
        normalize_percentile(x, np.ones_like(x, dtype=bool))


@given(seed=st.integers(0, 10_000), p_lo=st.floats(0, 20), p_hi=st.floats(80, 100))
def test_normalized_within_unit_range(seed, p_lo, p_hi):
    r = np.random.default_rng(seed)
    x = r.lognormal(size=(8, 8))
    norm, _ = normalize_percentile(x, np.ones_like(x, dtype=bool), p_lo, p_hi)
    assert norm.min() >= -1.0 and norm.max() <= 1.0


def test_denormalize_endpoints_and_round_trip(rng):
    x = rng.uniform(1, 5, size=(10, 10))
    norm, params = normalize_percentile(x, np.ones_like(x, dtype=bool))
    assert denormalize(np.array(-1.0), params) == pytest.approx(params.lo)
    inside = (x >= params.lo) & (x <= params.hi)
    np.testing.assert_allclose(denormalize(norm, params)[inside], x[inside], rtol=1e-6)
    # clamped values collapse to the range ends
    assert np.all(denormalize(norm, params)[x < params.lo] == pytest.approx(params.lo))


@given(seed=st.integers(0, 10_000), mode=st.sampled_from(list(TargetMode)))
def test_full_chain_round_trip(seed, mode):
    r = np.random.default_rng(seed)
    d = r.uniform(0.3, 80.0, size=(12, 12))
    mask = np.ones_like(d, dtype=bool)
    norm, params = prepare_target(d, mask, mode)
    back = target_to_depth(denormalize(norm, params), mode)
    unclamped = np.abs(norm) < 1.0
    np.testing.assert_allclose(back[unclamped], d[unclamped], rtol=1e-5)


@given(a=st.floats(0.1, 100), b=st.floats(0.1, 100))
def test_monotonicity(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    arr = np.array([[lo, hi]])
    m = np.ones_like(arr, dtype=bool)
    assert np.diff(depth_to_target(arr, m, "depth"))[0, 0] > 0
    assert np.diff(depth_to_target(arr, m, "disparity"))[0, 0] < 0
    assert np.diff(depth_to_target(arr, m, "sqrt_disparity"))[0, 0] < 0


def test_prepare_target_zeroes_invalid():
    d = np.array([[1.0, 2.0], [3.0, 4.0]])
    m = np.array([[True, True], [True, False]])
    norm, _ = prepare_target(d, m, "depth")
    assert norm[1, 1] == 0.0


def test_norm_params_text_round_trip(tmp_path):
    p = NormParams(0.1, 0.9, 2.0, 98.0, TargetMode.disparity)
    p.save(tmp_path / "norm.txt")
    text = (tmp_path / "norm.txt").read_text()
    for key in ("lo=", "hi=", "p_lo=", "p_hi=", "mode="):
        assert key in text
    assert NormParams.load(tmp_path / "norm.txt") == p
    (tmp_path / "bad.txt").write_text("lo=abc\n")
    with pytest.raises(ParseError):
        NormParams.load(tmp_path / "bad.txt")


def test_histogram_mass_and_single_pixel():
    samples = generate_split(6, 1, (32, 32))
    mass, edges = target_histogram(samples, "sqrt_disparity", bins=20)
    assert mass.sum() == pytest.approx(1.0, abs=1e-9) and len(edges) == 21
    mass1, _ = target_histogram([(np.array([[2.0]]), ONE)], "depth", bins=10)
    assert mass1.max() == 1.0


def test_outdoor_entropy_direction():
    samples = [s for s in generate_split(80, 4) if s.domain_tag.value == "outdoor_like"]
    samples += [s for s in generate_split(200, 9) if s.domain_tag.value == "outdoor_like"]
    h_depth = entropy(target_histogram(samples, "depth")[0])
    h_sqrt = entropy(target_histogram(samples, "sqrt_disparity")[0])
    assert h_sqrt > h_depth
