import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lpnn.numerics import (ActFormat, DegenerateFilterError, QTensor, QuantizationError, WeightFormat,
                           decode_act, quantize_act_code, quantize_act_codes, quantize_act_ref,
                           quantize_weights_binary, quantize_weights_int, quantize_weights_ternary)

TWO = ActFormat(2)


@pytest.mark.parametrize("x, expected", [(0.5, 2 / 3), (-0.7, 0.0), (1.9, 1.0)])
def test_quantize_ref_examples(x, expected):
    assert quantize_act_ref(x, TWO) == expected


@pytest.mark.parametrize("x, code", [(0.0, 0), (1.7, 3), (0.4, 1)])
def test_quantize_code_examples(x, code):
    assert quantize_act_code(x, TWO) == code


def test_quantize_code_rejects_negative_and_one_bit():
    with pytest.raises(QuantizationError):
        quantize_act_code(-0.1, TWO)
    with pytest.raises(QuantizationError):
        quantize_act_code(0.3, ActFormat(1))


@pytest.mark.parametrize("code, bits, value", [(2, 2, 2 / 3), (0, 1, -1.0), (3, 2, 1.0), (1, 1, 1.0)])
def test_decode_examples(code, bits, value):
    assert decode_act(code, ActFormat(bits)) == value


def test_decode_out_of_range():
    with pytest.raises(QuantizationError):
        decode_act(4, TWO)


def test_act_format_bounds():
    with pytest.raises(QuantizationError):
        ActFormat(0)
    with pytest.raises(QuantizationError):
        ActFormat(9)
    assert ActFormat(8).levels == 255 and ActFormat(1).bipolar


def test_one_bit_thresholds_at_zero():
    codes = quantize_act_codes(np.array([-1.0, 0.0, 1e-9, 3.0]), ActFormat(1))
    assert codes.tolist() == [0, 0, 1, 1]


@pytest.mark.parametrize("bits", range(2, 9))
def test_code_and_ref_agree_on_grid(bits):
    fmt = ActFormat(bits)
    xs = np.linspace(0.0, 1.5, 10_001)
    codes = quantize_act_codes(xs, fmt)
    for x, c in zip(xs[::37], codes[::37]):
        assert quantize_act_code(float(x), fmt) == c
        assert c / fmt.levels == quantize_act_ref(float(x), fmt)


@pytest.mark.parametrize("bits", range(2, 9))
def test_idempotence_exhaustive(bits):
    fmt = ActFormat(bits)
    codes = np.arange(fmt.levels + 1)
    assert np.array_equal(quantize_act_codes(decode_act(codes, fmt), fmt), codes)
    for c in codes:
        assert quantize_act_code(decode_act(int(c), fmt), fmt) == c


@given(st.floats(-10, 10), st.floats(-10, 10), st.integers(2, 8))
def test_monotone_and_in_range(a, b, bits):
    fmt = ActFormat(bits)
    lo, hi = sorted((a, b))
    ca, cb = quantize_act_codes(np.array([lo, hi]), fmt)
    assert 0 <= ca <= cb <= fmt.levels


@given(st.floats(0, 4, allow_subnormal=False), st.integers(2, 8))
def test_code_matches_ref_random(x, bits):
    fmt = ActFormat(bits)
    assert quantize_act_code(x, fmt) / fmt.levels == quantize_act_ref(x, fmt)


def test_qtensor_validation():
    with pytest.raises(QuantizationError):
        QTensor(np.zeros((2, 2)), TWO)
    with pytest.raises(QuantizationError):
        QTensor(np.full((1, 1, 1, 1), 4), TWO)
    t = QTensor(np.array([[[[0, 3]]]]), TWO)
    assert t.decode().tolist() == [[[[0.0, 1.0]]]]


# -- weights ----------------------------------------------------------------------

def _sse(w, alpha, c):
    return float(((np.asarray(w) - alpha * np.asarray(c)) ** 2).sum())


def _best_codes_sse(w, alpha, values):
    return min(_sse(w, alpha, c) for c in itertools.product(values, repeat=len(w)))


def test_ternary_example():
    bank = quantize_weights_ternary([0.8, -0.9, 0.05, 0.0])
    assert bank.codes.tolist() == [[1, -1, 0, 0]]
    assert bank.alpha[0] == pytest.approx(0.85)
    assert _sse([0.8, -0.9, 0.05, 0.0], 0.85, bank.codes[0]) == pytest.approx(
        _best_codes_sse([0.8, -0.9, 0.05, 0.0], 0.85, (-1, 0, 1)))


def test_ternary_exact_and_degenerate():
    bank = quantize_weights_ternary([1, 1, 1, 1])
    assert bank.codes.tolist() == [[1, 1, 1, 1]] and bank.alpha[0] == 1
    with pytest.raises(DegenerateFilterError):
        quantize_weights_ternary([0, 0, 0])


def test_ternary_refinement_beats_plain_threshold():
    # plain 0.7*mean threshold keeps both entries; refinement drops the small one
    w = [10.0, 1.0, 0.0, 0.0]
    bank = quantize_weights_ternary(w)
    assert bank.codes.tolist() == [[1, 0, 0, 0]]
    assert _sse(w, bank.alpha[0], bank.codes[0]) == pytest.approx(_best_codes_sse(w, bank.alpha[0], (-1, 0, 1)))


def test_binary_examples():
    bank = quantize_weights_binary([0.5, -0.3])
    assert bank.codes.tolist() == [[1, -1]] and bank.alpha[0] == pytest.approx(0.4)
    assert quantize_weights_binary([-2, -2]).codes.tolist() == [[-1, -1]]
    with pytest.raises(DegenerateFilterError):
        quantize_weights_binary([0, 0])
    assert bank.stored_codes().tolist() == [[1, 0]]


def test_weight_quantizers_match_brute_force():
    rng = np.random.default_rng(7)
    for n in range(1, 9):
        for _ in range(25):
            w = rng.normal(size=n) * rng.choice([0.1, 1, 10])
            t = quantize_weights_ternary(w)
            assert t.alpha[0] > 0
            assert _sse(w, t.alpha[0], t.codes[0]) <= _best_codes_sse(w, t.alpha[0], (-1, 0, 1)) + 1e-12
            b = quantize_weights_binary(w)
            assert _sse(w, b.alpha[0], b.codes[0]) <= _best_codes_sse(w, b.alpha[0], (-1, 1)) + 1e-12


def test_filter_bank_is_per_feature():
    w = np.stack([np.full((2, 3, 3), 0.5), np.full((2, 3, 3), -2.0)])
    bank = quantize_weights_ternary(w)
    assert bank.codes.shape == (2, 2, 3, 3)
    assert bank.alpha.tolist() == [0.5, 2.0]
    assert np.allclose(bank.real_filters(), w)


def test_int_weights_two_complement():
    bank = quantize_weights_int([[1.0, -1.0, 0.5, -0.26]], 3)
    assert bank.codes.tolist() == [[3, -3, 2, -1]]
    assert WeightFormat("int", 3).value_range == (-4, 3)


def test_weight_format_labels():
    assert WeightFormat.parse("T") == WeightFormat("ternary")
    assert WeightFormat("binary").effective_bits == 1
    assert WeightFormat("ternary").effective_bits == 2
