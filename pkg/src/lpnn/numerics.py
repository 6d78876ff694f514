"""Quantization formats and quantizers for activations and weights.

Activations with ``bits >= 2`` are unsigned fractions: code ``k`` stands for
``k / L`` with ``L = 2**bits - 1``.  One-bit activations are bipolar, code 0
is -1 and code 1 is +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class QuantizationError(ValueError):
    """Raised on contract violations in the quantizers."""


class DegenerateFilterError(QuantizationError):
    """A filter has no nonzero weight, so its scale is undefined."""


@dataclass(frozen=True)
class ActFormat:
    bits: int

    def __post_init__(self):
        if not isinstance(self.bits, (int, np.integer)) or not 1 <= self.bits <= 8:
            raise QuantizationError(f"activation bits must be in 1..8, got {self.bits!r}")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1

    @property
    def bipolar(self) -> bool:
        return self.bits == 1

    def __str__(self):
        return f"{self.bits}-bit"


WEIGHT_KINDS = ("fp32", "int", "ternary", "binary")


@dataclass(frozen=True)
class WeightFormat:
    """Weight representation.

    ``kind`` is one of ``fp32``, ``int`` (two's complement, ``bits`` 2..8),
    ``ternary`` (-1, 0, +1) or ``binary`` (-1, +1 stored as codes 0/1).
    """

    kind: str
    bits: int = 0

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise QuantizationError(f"unknown weight kind {self.kind!r}")
        if self.kind == "int":
            if not 2 <= self.bits <= 8:
                raise QuantizationError(f"signed weight bits must be in 2..8, got {self.bits}")
        else:
            object.__setattr__(self, "bits", {"fp32": 32, "ternary": 2, "binary": 1}[self.kind])

    @property
    def effective_bits(self) -> int:
        return self.bits

    @property
    def value_range(self) -> tuple[int, int]:
        """Inclusive range of the integer weight values (decoded, not stored codes)."""
        if self.kind == "int":
            return -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if self.kind in ("ternary", "binary"):
            return -1, 1
        raise QuantizationError("fp32 weights have no integer range")

    @property
    def label(self) -> str:
        if self.kind == "int":
            return str(self.bits)
        return {"fp32": "fp32", "ternary": "T", "binary": "B"}[self.kind]

    def __str__(self):
        if self.kind == "int":
            return f"{self.bits}-bit"
        return {"fp32": "FP32", "ternary": "Ternary", "binary": "Binary"}[self.kind]

    @classmethod
    def parse(cls, text: str) -> "WeightFormat":
        t = str(text).strip().lower()
        aliases = {"t": "ternary", "b": "binary", "fp32": "fp32", "ternary": "ternary",
                   "binary": "binary", "float": "fp32", "32": "fp32"}
        if t in aliases:
            return cls(aliases[t])
        t = t.removesuffix("-bit")
        if t == "1":
            return cls("binary")
        return cls("int", int(t))


TERNARY = WeightFormat("ternary")
BINARY = WeightFormat("binary")


def _check_quantizable(fmt: ActFormat):
    if fmt.bits < 2:
        raise QuantizationError("rounding quantizer needs bits >= 2; 1-bit activations use sign thresholding")


def quantize_act_ref(x: float, fmt: ActFormat) -> float:
    """Unoptimized clip-scale-round quantizer, returns the quantized real value."""
    _check_quantizable(fmt)
    L = fmt.levels
    return math.floor(min(max(0.0, x), 1.0) * L + 0.5) / L


def quantize_act_code(x: float, fmt: ActFormat) -> int:
    """Clip-and-round quantizer for post-ReLU inputs; returns the integer code."""
    _check_quantizable(fmt)
    if x < 0:
        raise QuantizationError(f"quantize_act_code expects x >= 0 (post-ReLU), got {x!r}")
    return math.floor(min(1.0, x) * fmt.levels + 0.5)


def quantize_act_codes(x: np.ndarray, fmt: ActFormat) -> np.ndarray:
    """Vectorized activation quantizer.

    Applies ReLU first, so it accepts any real input.  For ``bits >= 2`` this is
    ``floor(min(1, max(0, x)) * L + 0.5)``; for 1-bit it thresholds at zero
    (code 1 iff ``x > 0``).
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if fmt.bipolar:
        return (x > 0).astype(np.int64)
    one = x.dtype.type
    return np.floor(np.clip(x, 0, 1) * one(fmt.levels) + one(0.5)).astype(np.int64)


def decode_act(code, fmt: ActFormat):
    """Real value represented by an activation code (scalar or array)."""
    arr = np.asarray(code)
    if np.any(arr < 0) or np.any(arr > fmt.levels):
        raise QuantizationError(f"code out of range for {fmt}: {code!r}")
    if fmt.bipolar:
        out = 2.0 * arr - 1.0
    else:
        out = arr / fmt.levels
    return float(out) if out.ndim == 0 else out


@dataclass
class QTensor:
    """Integer-coded activation tensor in NCHW layout."""

    codes: np.ndarray
    format: ActFormat

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        if self.codes.ndim != 4:
            raise QuantizationError(f"QTensor must be 4-D (N, C, H, W), got shape {self.codes.shape}")
        if not np.issubdtype(self.codes.dtype, np.integer):
            raise QuantizationError("QTensor codes must be integers")
        self.codes = self.codes.astype(np.int64, copy=False)
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() > self.format.levels):
            raise QuantizationError(f"codes out of range for {self.format}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.codes.shape

    def decode(self) -> np.ndarray:
        if self.format.bipolar:
            return 2.0 * self.codes - 1.0
        return self.codes / self.format.levels


@dataclass
class QuantizedFilterBank:
    """Quantized filters ``codes[f, cin, kh, kw]`` with one positive scale per output feature.

    ``codes`` holds decoded integer weight values (-1/0/+1 for ternary, -1/+1
    for binary, two's complement values for ``int``).
    """

    codes: np.ndarray
    alpha: np.ndarray
    format: WeightFormat = field(default=TERNARY)

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64).reshape(-1)
        if self.codes.ndim < 1 or self.codes.shape[0] != self.alpha.shape[0]:
            raise QuantizationError("one alpha per output feature required")
        if np.any(~(self.alpha > 0)) or not np.all(np.isfinite(self.alpha)):
            raise QuantizationError("alpha must be positive and finite for every feature")
        lo, hi = self.format.value_range
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise QuantizationError(f"filter codes outside {self.format} range")
        if self.format.kind == "binary" and np.any(self.codes == 0):
            raise QuantizationError("binary filters cannot contain 0")

    @property
    def features(self) -> int:
        return self.codes.shape[0]

    def stored_codes(self) -> np.ndarray:
        """Hardware storage codes; binary weights map -1/+1 to 0/1."""
        if self.format.kind == "binary":
            return (self.codes > 0).astype(np.int64)
        return self.codes

    def real_filters(self) -> np.ndarray:
        shape = (-1,) + (1,) * (self.codes.ndim - 1)
        return self.codes * self.alpha.reshape(shape)


def _as_feature_rows(filters) -> tuple[np.ndarray, tuple[int, ...]]:
    w = np.asarray(filters, dtype=np.float64)
    if w.ndim == 1:
        w = w[None, :]
    return w.reshape(w.shape[0], -1), w.shape


def quantize_weights_ternary(filters, max_iter: int = 64) -> QuantizedFilterBank:
    """Ternarize filters with a per-feature scale.

    Starts from the threshold rule ``|w| > 0.7 * mean(|w|)`` and then
    alternates ``alpha = mean(|w| over kept)`` and ``keep = |w| > alpha / 2``
    until the kept set stops changing.  The fixed point has codes that are
    optimal for its alpha and an alpha that is optimal for its codes.  A 1-D
    input is treated as a single feature.
    """
    rows, shape = _as_feature_rows(filters)
    absw = np.abs(rows)
    if np.any(absw.max(axis=1) == 0):
        raise DegenerateFilterError("all-zero filter: ternary scale undefined")
    keep = absw > 0.7 * absw.mean(axis=1, keepdims=True)
    for _ in range(max_iter):
        alpha = (absw * keep).sum(axis=1) / keep.sum(axis=1)
        nxt = absw > alpha[:, None] / 2
        if np.array_equal(nxt, keep):
            break
        keep = nxt
    else:
        alpha = (absw * keep).sum(axis=1) / keep.sum(axis=1)
    codes = np.where(keep, np.sign(rows), 0).astype(np.int64)
    return QuantizedFilterBank(codes.reshape(shape), alpha, TERNARY)


def quantize_weights_binary(filters) -> QuantizedFilterBank:
    """Sign binarization (``sign(0) = +1``) with ``alpha = mean(|w|)`` per feature."""
    rows, shape = _as_feature_rows(filters)
    alpha = np.abs(rows).mean(axis=1)
    if np.any(alpha == 0):
        raise DegenerateFilterError("all-zero filter: binary scale undefined")
    codes = np.where(rows >= 0, 1, -1).astype(np.int64)
    return QuantizedFilterBank(codes.reshape(shape), alpha, BINARY)


def quantize_weights_int(filters, bits: int) -> QuantizedFilterBank:
    """Symmetric two's complement weights, ``alpha = max|w| / (2**(bits-1) - 1)``."""
    fmt = WeightFormat("int", bits)
    rows, shape = _as_feature_rows(filters)
    peak = np.abs(rows).max(axis=1)
    if np.any(peak == 0):
        raise DegenerateFilterError("all-zero filter: integer scale undefined")
    qmax = (1 << (bits - 1)) - 1
    alpha = peak / qmax
    lo, hi = fmt.value_range
    codes = np.clip(np.floor(rows / alpha[:, None] + 0.5), lo, hi).astype(np.int64)
    return QuantizedFilterBank(codes.reshape(shape), alpha, fmt)


def quantize_weights(filters, fmt: WeightFormat) -> QuantizedFilterBank:
    if fmt.kind == "ternary":
        return quantize_weights_ternary(filters)
    if fmt.kind == "binary":
        return quantize_weights_binary(filters)
    if fmt.kind == "int":
        return quantize_weights_int(filters, fmt.bits)
    raise QuantizationError("fp32 weights are not quantized")
