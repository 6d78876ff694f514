"""Dot-product engines and the PE cost catalog.

Every engine takes integer activation codes along the last axis and returns
the exact signed integer dot product, so they accept plain lists or batched
numpy arrays alike.

Packed DSP operand layout (18 bits, LSB first)::

    bits  0-1   lane 0 data      bits  2-3   lane 0 guard
    bits  4-5   lane 1 data      bits  6-7   lane 1 guard
    bits  8-9   lane 2 data      bits 10-11  lane 2 guard
    bits 12-13  lane 3 data      bits 14-15  lane 3 guard
    bits 16-17  pad (zero)

Lanes hold unsigned 2-bit activation codes, so guard bits are zero on input.
During the multiply each lane product occupies its own 4-bit field as a
signed value; the guard bits carry its sign extension.  Products of a 2-bit
unsigned lane and a weight in -2..1 lie in -6..3 and fit a signed 4-bit field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .numerics import ActFormat, WeightFormat, TERNARY, BINARY


class PEError(ValueError):
    pass


class AccumulatorOverflow(ArithmeticError):
    """An accumulator value does not fit its configured signed width."""


LANES = 4
LANE_STRIDE = 4
LANE_BITS = 2
OPERAND_BITS = 18
PRODUCT_BITS = 2 * OPERAND_BITS
_OPERAND_MASK = (1 << OPERAND_BITS) - 1


def acc_width(act_bits: int, weight_bits_effective: int, dot_size: int) -> int:
    """Signed accumulator width that can hold any dot of ``dot_size`` products."""
    if min(act_bits, weight_bits_effective, dot_size) < 1:
        raise PEError("acc_width arguments must be >= 1")
    return act_bits + weight_bits_effective + math.ceil(math.log2(dot_size))


@dataclass
class DotAccumulator:
    width_bits: int
    value: int = 0

    def __post_init__(self):
        self._check(self.value)

    def _check(self, v):
        if abs(v) >= 1 << (self.width_bits - 1):
            raise AccumulatorOverflow(f"value {v} overflows a signed {self.width_bits}-bit accumulator")

    def add(self, v: int) -> "DotAccumulator":
        nv = self.value + int(v)
        self._check(nv)
        self.value = nv
        return self


def check_accumulator(values: np.ndarray, width_bits: int) -> None:
    """Raise if any value lies outside a signed ``width_bits`` range."""
    values = np.asarray(values)
    if values.size == 0:
        return
    bound = 1 << (width_bits - 1)
    worst = int(np.abs(values).max())
    if worst >= bound:
        raise AccumulatorOverflow(f"|acc| = {worst} overflows a signed {width_bits}-bit accumulator")


def _pair(a, w):
    a = np.asarray(a, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    if a.shape[-1:] != w.shape[-1:]:
        raise PEError(f"length mismatch: {a.shape[-1:]} vs {w.shape[-1:]}")
    return a, w


def _out(x):
    return int(x) if np.ndim(x) == 0 else x


def dot_ref(act_codes, weights):
    """Plain integer multiply-accumulate."""
    a, w = _pair(act_codes, weights)
    return _out((a * w).sum(axis=-1))


def dot_binary_mux(act_codes, weight_codes):
    """Binary weights stored as 0/1 (meaning -1/+1): sign flip and mux, then add."""
    a, w = _pair(act_codes, weight_codes)
    if w.size and (w.min() < 0 or w.max() > 1):
        raise PEError("binary weight codes must be 0 or 1")
    return _out(np.where(w == 1, a, -a).sum(axis=-1))


def dot_ternary_mux(act_codes, weight_codes):
    """Ternary weights -1/0/+1: three-way mux of {-a, 0, +a}, then add."""
    a, w = _pair(act_codes, weight_codes)
    if w.size and (w.min() < -1 or w.max() > 1):
        raise PEError("ternary weight codes must be -1, 0 or +1")
    return _out(np.where(w == 1, a, np.where(w == -1, -a, 0)).sum(axis=-1))


_POPCOUNT8 = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def dot_xnor_popcount(act_codes, weight_codes):
    """1-bit x 1-bit dot product as ``2 * popcount(XNOR(a, w)) - N``.

    Both operands are bit-packed into bytes before the XNOR; pad bits in the
    last byte are masked off.
    """
    a, w = _pair(act_codes, weight_codes)
    for v in (a, w):
        if v.size and (v.min() < 0 or v.max() > 1):
            raise PEError("XNOR operands must be 0/1 codes")
    n = a.shape[-1]
    if n == 0:
        return _out(np.zeros(np.broadcast_shapes(a.shape, w.shape)[:-1], dtype=np.int64))
    pa = np.packbits(a.astype(np.uint8), axis=-1, bitorder="little")
    pw = np.packbits(w.astype(np.uint8), axis=-1, bitorder="little")
    xnor = ~(pa ^ pw)
    tail = n % 8
    if tail:
        xnor[..., -1] &= np.uint8((1 << tail) - 1)
    ones = _POPCOUNT8[xnor].sum(axis=-1)
    return _out(2 * ones - n)


@dataclass(frozen=True)
class PackedOperand:
    word: int

    def __post_init__(self):
        if not 0 <= self.word <= _OPERAND_MASK:
            raise PEError(f"packed word must be an unsigned {OPERAND_BITS}-bit value")

    @property
    def lanes(self) -> tuple[int, ...]:
        m = (1 << LANE_BITS) - 1
        return tuple((self.word >> (LANE_STRIDE * i)) & m for i in range(LANES))


def pack_dsp_operand(lanes: Sequence[int]) -> PackedOperand:
    lanes = [int(v) for v in lanes]
    if len(lanes) != LANES:
        raise PEError(f"expected {LANES} lanes, got {len(lanes)}")
    if any(not 0 <= v < (1 << LANE_BITS) for v in lanes):
        raise PEError(f"lane values must be in 0..{(1 << LANE_BITS) - 1}: {lanes}")
    return PackedOperand(sum(v << (LANE_STRIDE * i) for i, v in enumerate(lanes)))


def _signed(value, bits):
    value &= (1 << bits) - 1
    return value - (1 << bits) if value >> (bits - 1) else value


WEIGHT_RANGES = {"ternary": (-1, 1), "int2": (-2, 1)}


def dsp_packed_multiply(packed: PackedOperand, weight: int, mode: str = "ternary") -> tuple[int, ...]:
    """Multiply four packed lanes by one weight with a single 18x18 multiply.

    The weight is sign-extended to 18 bits, the 36-bit two's complement
    product is formed, and lanes are recovered lowest first: each 4-bit field
    is read as signed, then subtracted out so its borrow does not leak into
    the next lane.
    """
    lo, hi = WEIGHT_RANGES[mode]
    if not lo <= weight <= hi:
        raise PEError(f"weight {weight} out of range {lo}..{hi} for mode {mode!r}")
    w18 = weight & _OPERAND_MASK
    product = _signed(packed.word * _signed(w18, OPERAND_BITS), PRODUCT_BITS)
    out = []
    for _ in range(LANES):
        lane = _signed(product, LANE_STRIDE)
        out.append(lane)
        product = (product - lane) >> LANE_STRIDE
    return tuple(out)


def dsp_packed_multiply_array(lanes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Vectorized packed multiply; ``lanes[..., 4]`` codes times ``weights[...]``."""
    lanes = np.asarray(lanes, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.int64)
    shifts = LANE_STRIDE * np.arange(LANES, dtype=np.int64)
    words = (lanes << shifts).sum(axis=-1)
    product = words * weights
    mask = (1 << PRODUCT_BITS) - 1
    product = product & mask
    product = np.where(product >> (PRODUCT_BITS - 1), product - (1 << PRODUCT_BITS), product)
    out = np.empty(product.shape + (LANES,), dtype=np.int64)
    for i in range(LANES):
        f = product & 0xF
        f = np.where(f >= 8, f - 16, f)
        out[..., i] = f
        product = (product - f) >> LANE_STRIDE
    return out


def dot_dsp_packed(act_lanes, weight_codes):
    """Four dot products at once, one per lane, sharing the weight vector.

    ``act_lanes`` has shape ``(..., N, 4)``; each step multiplies the packed
    word of four 2-bit activations by one weight and adds the lane products.
    """
    a = np.asarray(act_lanes, dtype=np.int64)
    w = np.asarray(weight_codes, dtype=np.int64)
    if a.shape[-1] != LANES or a.shape[-2] != w.shape[-1]:
        raise PEError("act_lanes must be (..., N, 4) matching the weight length")
    if a.size and (a.min() < 0 or a.max() > 3):
        raise PEError("packed lanes must hold 2-bit unsigned codes")
    if w.size and (w.min() < -2 or w.max() > 1):
        raise PEError("packed weights must be in -2..1")
    return dsp_packed_multiply_array(a, w).sum(axis=-2)


@dataclass(frozen=True)
class PeConfig:
    """One PE flavour: operand formats plus its logic cost.

    ``act_bits`` is 32 for the floating-point DSP configuration.
    """

    act_bits: int
    weight: WeightFormat
    words_per_dot: int
    alms_per_dot: int
    dsp_macs_per_block: int = 0

    def __post_init__(self):
        if self.words_per_dot < 1 or self.alms_per_dot < 0 or self.dsp_macs_per_block < 0:
            raise PEError(f"invalid PE configuration {self}")

    @property
    def is_fp32(self) -> bool:
        return self.weight.kind == "fp32"

    @property
    def act(self) -> ActFormat:
        return ActFormat(self.act_bits)

    @property
    def pair(self) -> str:
        """Short label such as ``2xT`` or ``8x8``."""
        if self.is_fp32:
            return "fp32"
        if self.act_bits == 1 and self.weight.kind == "binary":
            return "1x1"
        return f"{self.act_bits}x{self.weight.label}"

    @property
    def name(self) -> str:
        if self.is_fp32:
            return "fp32"
        return f"{self.pair}/{self.words_per_dot}"

    @property
    def act_label(self) -> str:
        return "FP32" if self.is_fp32 else f"{self.act_bits}-bit"


FP32_PE = PeConfig(32, WeightFormat("fp32"), 1, 0, 0)

# 2-bit x ternary packs eight multiplies into each DSP block (two 18x18
# multipliers, four lanes each).
PACKED_DSP_MACS = {"2xT": 8}


def _load_catalog() -> tuple[PeConfig, ...]:
    from .fixtures import load_fixture

    rows = []
    for r in load_fixture("pe_catalog.yaml")["rows"]:
        w = WeightFormat.parse(r["weight"])
        cfg = PeConfig(int(r["act_bits"]), w, int(r["words_per_dot"]), int(r["alms_per_dot"]))
        rows.append(PeConfig(cfg.act_bits, w, cfg.words_per_dot, cfg.alms_per_dot,
                             PACKED_DSP_MACS.get(cfg.pair, 0)))
    return tuple(rows)


@lru_cache(maxsize=None)
def _catalog_cached(_key) -> tuple[PeConfig, ...]:
    return _load_catalog()


def pe_catalog() -> list[PeConfig]:
    """All PE configurations with their measured ALM cost per dot unit."""
    from .fixtures import fixture_dir

    return list(_catalog_cached(str(fixture_dir())))


def lookup_pe(name: str, catalog: Sequence[PeConfig] | None = None) -> PeConfig:
    """Find a PE by ``pair/words`` (``2xT/64``) or by pair (``2xT``, largest words/dot)."""
    key = name.strip()
    if key.lower() == "fp32":
        return FP32_PE
    catalog = pe_catalog() if catalog is None else catalog
    if "/" in key:
        for pe in catalog:
            if pe.name.lower() == key.lower():
                return pe
        raise PEError(f"unknown PE configuration {name!r}")
    matches = [pe for pe in catalog if pe.pair.lower() == key.lower()]
    if not matches:
        raise PEError(f"unknown PE configuration {name!r}")
    return max(matches, key=lambda pe: pe.words_per_dot)


def table4_set(catalog: Sequence[PeConfig] | None = None) -> list[PeConfig]:
    """FP32 plus, for each (act, weight) pair, the widest dot in the catalog."""
    catalog = pe_catalog() if catalog is None else catalog
    seen: dict[str, PeConfig] = {}
    for pe in catalog:
        if pe.pair not in seen or pe.words_per_dot > seen[pe.pair].words_per_dot:
            seen[pe.pair] = pe
    return [FP32_PE, *seen.values()]


def select_dot(act: ActFormat, weight: WeightFormat, variant: str = "auto") -> str:
    """Name the PE engine used for an (activation, weight) format pair.

    ``ref`` forces the plain MAC; ``dsp`` requests the packed DSP path, which
    only exists for 2-bit activations with ternary or 2-bit weights.
    """
    if variant == "ref":
        return "ref"
    if variant == "dsp":
        if act.bits == 2 and (weight == TERNARY or weight == WeightFormat("int", 2)):
            return "dsp"
        raise PEError(f"packed DSP path needs 2-bit activations and ternary/2-bit weights, got {act}x{weight}")
    if variant != "auto":
        raise PEError(f"unknown PE variant {variant!r}")
    if weight == BINARY:
        return "xnor" if act.bipolar else "binary_mux"
    if weight == TERNARY and not act.bipolar:
        return "ternary_mux"
    return "ref"
