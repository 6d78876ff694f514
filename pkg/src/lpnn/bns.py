"""Fused batch-norm + scale + weight-scale primitive.

Raw per-feature parameters are the batch-norm shift ``w`` (mean-like), the
batch-norm divisor ``x`` (std-like), the learned scale ``y`` and shift ``z``,
and the weight scale ``alpha``.  They merge into one scale/shift pair::

    gamma = (y / x) * alpha
    beta  = z - (y / x) * w

so that ``y * ((alpha * v - w) / x) + z == gamma * v + beta`` for a raw
accumulator value ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ActFormat


class BnsError(ValueError):
    pass


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=np.float64))


@dataclass
class BnsRaw:
    w: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        arrays = np.broadcast_arrays(*(_vec(getattr(self, k)) for k in ("w", "x", "y", "z", "alpha")))
        self.w, self.x, self.y, self.z, self.alpha = (a.copy() for a in arrays)

    @property
    def features(self) -> int:
        return self.w.shape[0]

    @classmethod
    def identity(cls, features: int, alpha=1.0) -> "BnsRaw":
        n = features
        return cls(np.zeros(n), np.ones(n), np.ones(n), np.zeros(n), np.broadcast_to(_vec(alpha), (n,)))

    def unfused(self, v, feature=None):
        """Reference evaluation with alpha applied to the raw accumulator."""
        sl = slice(None) if feature is None else feature
        return self.y[sl] * ((self.alpha[sl] * v - self.w[sl]) / self.x[sl]) + self.z[sl]


@dataclass
class BnsFused:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.gamma, self.beta = (a.copy() for a in np.broadcast_arrays(_vec(self.gamma), _vec(self.beta)))
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.beta))):
            raise BnsError("fused scale/shift must be finite")

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def as_float32(self) -> tuple[np.ndarray, np.ndarray]:
        return self.gamma.astype(np.float32), self.beta.astype(np.float32)


def fuse(raw: BnsRaw) -> BnsFused:
    if np.any(raw.x == 0):
        raise ZeroDivisionError("batch-norm divisor x must be nonzero")
    if np.any(~(raw.alpha > 0)):
        raise BnsError("alpha must be positive")
    ratio = raw.y / raw.x
    return BnsFused(ratio * raw.alpha, raw.z - ratio * raw.w)


def fold_input_scale(fused: BnsFused, input_format: ActFormat) -> BnsFused:
    """Absorb the ``1/L`` code scale of the incoming activations into gamma.

    Bipolar 1-bit codes are already accumulated as -1/+1, so they fold as
    the identity.
    """
    if input_format.bipolar:
        return BnsFused(fused.gamma, fused.beta)
    return BnsFused(fused.gamma / input_format.levels, fused.beta)


def apply(acc, fused: BnsFused, feature=None):
    """``gamma * acc + beta`` in single precision.

    With ``feature`` given, ``acc`` belongs to that feature; otherwise ``acc``
    is an array whose axis 1 (or last axis for 1-D input) indexes features.
    """
    g, b = fused.as_float32()
    if feature is not None:
        if not 0 <= feature < fused.features:
            raise IndexError(f"feature {feature} out of range for {fused.features} features")
        out = np.float32(g[feature]) * np.asarray(acc, dtype=np.float32) + np.float32(b[feature])
        return float(out) if np.ndim(out) == 0 else out
    acc = np.asarray(acc)
    if acc.ndim == 1:
        if acc.shape[0] != fused.features:
            raise BnsError("accumulator length does not match the feature count")
        return g * acc.astype(np.float32) + b
    if acc.shape[1] != fused.features:
        raise BnsError(f"accumulator has {acc.shape[1]} features, BNS has {fused.features}")
    shape = (1, -1) + (1,) * (acc.ndim - 2)
    return g.reshape(shape) * acc.astype(np.float32) + b.reshape(shape)
