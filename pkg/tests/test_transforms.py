import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgssl.records import Segment
from ecgssl.transforms import (
    BLUR_KERNEL,
    TransformSpec,
    apply_pipeline,
    channel_resize,
    dynamic_time_warp,
    gaussian_blur,
    gaussian_noise,
    parse_pipeline,
    random_resized_crop,
    time_out,
    two_views,
)

from transform_props import ALL_CHECKS

seeds = st.integers(0, 2**32 - 1)


@pytest.mark.parametrize("name", sorted(ALL_CHECKS))
@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_invariant(name, seed):
    ALL_CHECKS[name](seed)


def _seg(x):
    return Segment(np.asarray(x, dtype=np.float64), 100.0)


def test_gaussian_noise_moments():
    seg = _seg(np.zeros((4, 50_000)))
    out = gaussian_noise(seg, 0.01, np.random.default_rng(0)).samples
    n = out.size
    assert abs(out.mean()) < 3 * 0.01 / np.sqrt(n)
    # standard error of the sample std is about sigma / sqrt(2n)
    assert abs(out.std() - 0.01) < 3 * 0.01 / np.sqrt(2 * n)


def test_gaussian_noise_seeds_differ():
    seg = _seg(np.zeros((2, 100)))
    a = gaussian_noise(seg, 0.01, np.random.default_rng(1)).samples
    b = gaussian_noise(seg, 0.01, np.random.default_rng(2)).samples
    assert a.shape == b.shape and not np.array_equal(a, b)


def test_blur_impulse_response():
    x = np.zeros((1, 11))
    x[0, 5] = 1.0
    out = gaussian_blur(_seg(x)).samples
    np.testing.assert_allclose(out[0, 3:8], BLUR_KERNEL, atol=1e-15)
    assert np.all(out[0, :3] == 0) and np.all(out[0, 8:] == 0)


def test_blur_keeps_float32():
    seg = Segment(np.ones((2, 10), dtype=np.float32), 100.0)
    assert gaussian_blur(seg).samples.dtype == np.float32


def test_channel_resize_b3_range():
    seg = _seg(np.ones((500, 4)))
    out = channel_resize(seg, 3.0, np.random.default_rng(0)).samples
    assert np.all(out >= 1 / 3) and np.all(out <= 3)


def test_rrc_identity_and_half_ramp():
    x = np.tile(np.arange(100.0), (2, 1))
    np.testing.assert_allclose(random_resized_crop(_seg(x), 1.0, 1.0, np.random.default_rng(0)).samples, x, atol=1e-9)
    y = random_resized_crop(_seg(x), 0.5, 0.5, np.random.default_rng(3)).samples
    # 50 source samples stretched onto 100 outputs: slope (50 - 1) / (100 - 1)
    np.testing.assert_allclose(np.diff(y[0]), 49 / 99, atol=1e-12)


def test_time_out_half_of_250():
    x = np.random.default_rng(0).normal(size=(3, 250)) + 10
    out = time_out(_seg(x), 0.5, 0.5, np.random.default_rng(1)).samples
    zero = np.all(out == 0, axis=0)
    assert zero.sum() == 125
    idx = np.flatnonzero(zero)
    assert idx[-1] - idx[0] == 124
    np.testing.assert_array_equal(out[:, ~zero], x[:, ~zero])


def test_dtw_window_borders_fixed():
    x = np.random.default_rng(0).normal(size=(2, 300))
    out, count = dynamic_time_warp(_seg(x), 3, 10, np.random.default_rng(0), return_count=True)
    assert count == 3
    changed = np.flatnonzero(np.any(out.samples != x, axis=0))
    assert len(changed) <= 3 * 19


def test_dtw_fewer_anchors_when_crowded():
    _, count = dynamic_time_warp(_seg(np.ones((1, 30))), 5, 10, np.random.default_rng(0), return_count=True)
    assert count == 1


def test_spec_parsing():
    assert TransformSpec.parse("RandomResizedCrop").kind == "rrc"
    spec = TransformSpec.parse({"kind": "to", "t_u": 0.3})
    assert spec.params == {"t_l": 0.0, "t_u": 0.3}
    with pytest.raises(ValueError):
        TransformSpec("nope")
    with pytest.raises(ValueError):
        TransformSpec("rrc", {"l": 0.9, "m": 0.5})
    with pytest.raises(ValueError):
        TransformSpec("gn", {"bogus": 1})
    with pytest.raises(ValueError):
        TransformSpec.parse({"sigma": 1})


def test_two_views_identity_pipeline():
    seg = _seg(np.random.default_rng(0).normal(size=(2, 50)))
    a, b = two_views(seg, parse_pipeline([{"kind": "to", "t_l": 0, "t_u": 0}]), np.random.default_rng(0))
    np.testing.assert_array_equal(a.samples, seg.samples)
    np.testing.assert_array_equal(b.samples, seg.samples)


def test_two_views_reproducible_and_distinct():
    seg = _seg(np.random.default_rng(0).normal(size=(2, 250)))
    pipe = parse_pipeline(["rrc", "to"])
    a1, b1 = two_views(seg, pipe, np.random.default_rng(9))
    a2, b2 = two_views(seg, pipe, np.random.default_rng(9))
    np.testing.assert_array_equal(a1.samples, a2.samples)
    np.testing.assert_array_equal(b1.samples, b2.samples)
    distinct = 0
    for s in range(200):
        a, b = two_views(seg, pipe, np.random.default_rng(s))
        distinct += not np.array_equal(a.samples, b.samples)
    assert distinct == 200


def test_apply_pipeline_composes():
    seg = _seg(np.ones((1, 20)))
    out = apply_pipeline(seg, parse_pipeline([{"kind": "gn", "sigma": 0}, "gb"]), np.random.default_rng(0))
    np.testing.assert_array_equal(out.samples, seg.samples)
