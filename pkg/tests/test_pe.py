import itertools

import numpy as np
import pytest

from lpnn.numerics import ActFormat, BINARY, TERNARY, WeightFormat
from lpnn.pe import (AccumulatorOverflow, DotAccumulator, PEError, PackedOperand, acc_width, check_accumulator,
                     dot_binary_mux, dot_dsp_packed, dot_ref, dot_ternary_mux, dot_xnor_popcount,
                     dsp_packed_multiply, dsp_packed_multiply_array, lookup_pe, pack_dsp_operand, pe_catalog,
                     select_dot, table4_set)


@pytest.mark.parametrize("args, width", [((8, 2, 8), 13), ((1, 1, 4), 4), ((3, 3, 1), 6)])
def test_acc_width(args, width):
    assert acc_width(*args) == width


def test_acc_width_covers_worst_case():
    # 8 products of 255 * 1 must fit the 13-bit width
    check_accumulator(np.array([8 * 255, -8 * 255]), acc_width(8, 2, 8))
    with pytest.raises(AccumulatorOverflow):
        check_accumulator(np.array([4096]), 13)


def test_dot_accumulator_overflow():
    acc = DotAccumulator(4)
    for _ in range(7):
        acc.add(1)
    assert acc.value == 7
    with pytest.raises(AccumulatorOverflow):
        acc.add(1)


def test_dot_ref_examples():
    assert dot_ref([5, 3, 7], [1, 0, -1]) == -2
    assert dot_ref([9, 9], [0, 0]) == 0
    assert dot_ref([], []) == 0
    with pytest.raises(PEError):
        dot_ref([1, 2], [1])


def test_binary_mux_examples():
    assert dot_binary_mux([5, 5], [1, 0]) == 0
    assert dot_binary_mux([1, 2, 3], [1, 1, 1]) == 6
    assert dot_binary_mux([7, 0, 2], [0, 1, 0]) == -9
    assert dot_binary_mux([7, 0, 2], [0, 1, 0]) == dot_ref([7, 0, 2], [-1, 1, -1])


def test_ternary_mux_examples():
    assert dot_ternary_mux([5, 3, 7], [1, 0, -1]) == -2
    assert dot_ternary_mux([4, 4], [0, 0]) == 0
    w = [1] * 16
    assert dot_ternary_mux([255] * 16, w) == 4080
    acc = DotAccumulator(acc_width(8, 2, 16))
    for a in [255] * 16:
        acc.add(a)
    assert acc.value == 4080


def test_xnor_examples():
    assert dot_xnor_popcount([1, 0, 1, 0], [1, 1, 0, 0]) == 0
    a = [1, 0, 1, 1, 0, 0, 1, 0, 1, 1]
    assert dot_xnor_popcount(a, a) == len(a)
    assert dot_xnor_popcount([0, 0], [1, 1]) == -2


def test_xnor_exhaustive_n8():
    codes = np.array(list(itertools.product((0, 1), repeat=8)))
    a = codes[:, None, :]
    w = codes[None, :, :]
    got = dot_xnor_popcount(a, w)
    want = dot_ref(2 * a - 1, 2 * w - 1)
    assert got.shape == (256, 256)
    assert np.array_equal(got, want)


def test_ternary_mux_exhaustive_n4():
    acts = np.array(list(itertools.product(range(4), repeat=4)))
    ws = np.array(list(itertools.product((-1, 0, 1), repeat=4)))
    assert np.array_equal(dot_ternary_mux(acts[:, None], ws[None]), dot_ref(acts[:, None], ws[None]))


def test_engines_random_widths():
    rng = np.random.default_rng(3)
    for bits in range(2, 9):
        a = rng.integers(0, 2 ** bits, size=(20_000, 9))
        wb = rng.integers(0, 2, size=(20_000, 9))
        wt = rng.integers(-1, 2, size=(20_000, 9))
        assert np.array_equal(dot_binary_mux(a, wb), dot_ref(a, 2 * wb - 1))
        assert np.array_equal(dot_ternary_mux(a, wt), dot_ref(a, wt))


def test_xnor_random_lengths():
    rng = np.random.default_rng(4)
    for n in (1, 7, 9, 31, 64, 100):
        a = rng.integers(0, 2, size=(500, n))
        w = rng.integers(0, 2, size=(500, n))
        assert np.array_equal(dot_xnor_popcount(a, w), dot_ref(2 * a - 1, 2 * w - 1))


# -- packed DSP -------------------------------------------------------------------

def test_pack_layout():
    assert pack_dsp_operand([0, 0, 0, 0]).word == 0
    assert pack_dsp_operand([3, 2, 1, 0]).word == 0x123
    assert pack_dsp_operand([3, 2, 1, 0]).lanes == (3, 2, 1, 0)
    with pytest.raises(PEError):
        pack_dsp_operand([4, 0, 0, 0])
    with pytest.raises(PEError):
        PackedOperand(1 << 18)


def test_packed_multiply_examples():
    assert dsp_packed_multiply(pack_dsp_operand([1, 2, 3, 0]), -1) == (-1, -2, -3, 0)
    assert dsp_packed_multiply(pack_dsp_operand([3, 1, 2, 3]), 0) == (0, 0, 0, 0)
    assert dsp_packed_multiply(pack_dsp_operand([3, 3, 3, 3]), 1) == (3, 3, 3, 3)
    with pytest.raises(PEError):
        dsp_packed_multiply(pack_dsp_operand([0, 0, 0, 0]), -2)


@pytest.mark.parametrize("mode, weights", [("ternary", (-1, 0, 1)), ("int2", (-2, -1, 0, 1))])
def test_packed_multiply_exhaustive(mode, weights):
    for lanes in itertools.product(range(4), repeat=4):
        p = pack_dsp_operand(lanes)
        assert p.lanes == lanes
        for w in weights:
            assert dsp_packed_multiply(p, w, mode) == tuple(v * w for v in lanes)


def test_packed_array_matches_scalar():
    lanes = np.array(list(itertools.product(range(4), repeat=4)))
    for w in (-2, -1, 0, 1):
        got = dsp_packed_multiply_array(lanes, np.full(len(lanes), w))
        assert np.array_equal(got, lanes * w)


def test_dot_dsp_packed():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 4, size=(50, 12, 4))
    w = rng.integers(-2, 2, size=12)
    want = np.einsum("bnl,n->bl", a, w)
    assert np.array_equal(dot_dsp_packed(a, w), want)


# -- catalog ----------------------------------------------------------------------

@pytest.mark.parametrize("name, alms", [("8x8/8", 500), ("2xT/64", 318), ("1x1/8", 19)])
def test_catalog_lookup(name, alms):
    assert lookup_pe(name).alms_per_dot == alms


def test_catalog_shape():
    cat = pe_catalog()
    assert len(cat) == 15
    assert lookup_pe("2xT").words_per_dot == 64
    assert lookup_pe("2xT/64").dsp_macs_per_block == 8
    assert lookup_pe("fp32").is_fp32
    assert [pe.name for pe in table4_set()][0] == "fp32"
    with pytest.raises(PEError):
        lookup_pe("5x5")


def test_select_dot():
    two = ActFormat(2)
    assert select_dot(two, TERNARY) == "ternary_mux"
    assert select_dot(two, BINARY) == "binary_mux"
    assert select_dot(ActFormat(1), BINARY) == "xnor"
    assert select_dot(ActFormat(8), WeightFormat("int", 8)) == "ref"
    assert select_dot(two, TERNARY, "dsp") == "dsp"
    with pytest.raises(PEError):
        select_dot(ActFormat(8), TERNARY, "dsp")
