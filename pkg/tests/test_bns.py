import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpnn.bns import BnsError, BnsFused, BnsRaw, apply, fold_input_scale, fuse
from lpnn.numerics import ActFormat


def test_fuse_example():
    f = fuse(BnsRaw(0.5, 2.0, 3.0, 1.0, 2.0))
    assert f.gamma[0] == pytest.approx(3.0)
    assert f.beta[0] == pytest.approx(0.25)


def test_fuse_identity():
    f = fuse(BnsRaw.identity(3))
    assert f.gamma.tolist() == [1, 1, 1] and f.beta.tolist() == [0, 0, 0]


def test_fuse_errors():
    with pytest.raises(ZeroDivisionError):
        fuse(BnsRaw(0.0, 0.0, 1.0, 0.0, 1.0))
    with pytest.raises(BnsError):
        fuse(BnsRaw(0.0, 1.0, 1.0, 0.0, 0.0))


def test_fold_examples():
    f = fold_input_scale(BnsFused(3.0, 0.25), ActFormat(2))
    assert f.gamma[0] == pytest.approx(1.0) and f.beta[0] == 0.25
    z = fold_input_scale(BnsFused(0.0, 0.0), ActFormat(5))
    assert z.gamma[0] == 0 and z.beta[0] == 0
    assert fold_input_scale(BnsFused(1.0, 0.0), ActFormat(1)).gamma[0] == 1.0


def test_apply_examples():
    assert apply(6, BnsFused(1.0, 0.25), feature=0) == 6.25
    assert apply(0, BnsFused(123.0, -0.5), feature=0) == -0.5
    assert apply(-3, BnsFused(2.0, 0.0), feature=0) == -6.0


def test_apply_feature_axis():
    f = BnsFused([1.0, 2.0], [0.0, 1.0])
    acc = np.ones((2, 2, 3, 3), dtype=np.int64)
    out = apply(acc, f)
    assert out.dtype == np.float32
    assert np.all(out[:, 0] == 1) and np.all(out[:, 1] == 3)
    with pytest.raises(BnsError):
        apply(np.ones((1, 3, 1, 1)), f)


def _fused_matches(w, x, y, z, alpha, v):
    raw = BnsRaw(w, x, y, z, alpha)
    f = fuse(raw)
    fused = np.float64(apply(v, f, feature=0))
    unfused = float(raw.unfused(v, 0))
    scale = max(abs(unfused), abs(f.gamma[0] * v), abs(f.beta[0]), 1e-30)
    return abs(fused - unfused) / scale


def test_fusion_random_draws():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10_000):
        w, y, z = rng.normal(scale=10, size=3)
        x = rng.uniform(1e-3, 10)
        alpha = rng.uniform(1e-3, 4)
        v = int(rng.integers(-(2 ** 20), 2 ** 20 + 1))
        worst = max(worst, _fused_matches(w, x, y, z, alpha, v))
    assert worst < 1e-6


@given(st.floats(-100, 100), st.floats(1e-3, 100), st.floats(-100, 100), st.floats(-100, 100),
       st.floats(1e-3, 10), st.integers(-(2 ** 20), 2 ** 20))
def test_fusion_property(w, x, y, z, alpha, v):
    assert _fused_matches(w, x, y, z, alpha, v) < 1e-6
