"""Functional simulator of the low-precision accelerator datapath.

Per compute layer the integer PE array produces signed accumulators, the
fused BNS applies ``gamma * acc + beta`` in single precision, and ReLU plus
the clip-and-round quantizer turn the result back into unsigned codes.

Padding inserts activation code 0 in every format, which is 0.0 for unsigned
codes and -1 for bipolar 1-bit codes.  Pooling and residual additions are
evaluated exactly with integer arithmetic on rational code values.

``run_reference_fp32`` is an independent float64 path (plain convolution,
unfused batch norm, explicit weight scale, rounding in the real domain) used
to check the integer pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import bns as bns_mod
from .bns import BnsFused, BnsRaw
from .netgraph import INPUT, Network, LayerSpec
from .numerics import ActFormat, QTensor, QuantizedFilterBank, quantize_act_codes
from .pe import (AccumulatorOverflow, acc_width, check_accumulator, dot_binary_mux, dot_dsp_packed,
                 dot_ref, dot_ternary_mux, dot_xnor_popcount, select_dot, LANES)

IMAGE_FORMAT = ActFormat(8)


class EngineError(ValueError):
    """Shape or format mismatch between a bundle and its inputs."""


@dataclass
class LayerParams:
    filters: QuantizedFilterBank
    bn: BnsRaw
    acc_bits: int | None = None

    def __post_init__(self):
        if self.bn.features != self.filters.features:
            raise EngineError("BN parameters need one entry per output feature")
        if not np.array_equal(self.bn.alpha, self.filters.alpha):
            raise EngineError("BN alpha must be the filter bank's alpha")


def layer_params(filters: QuantizedFilterBank, w, x, y, z, acc_bits=None) -> LayerParams:
    return LayerParams(filters, BnsRaw(w, x, y, z, filters.alpha), acc_bits)


@dataclass
class ModelBundle:
    """A network plus everything the datapath needs to run it.

    ``out_formats`` maps layer name to its output activation format; layers
    without an entry keep their input's format (compute layers must have
    one).  Fused, input-scale-folded BNS parameters are derived on creation.
    """

    network: Network
    params: dict[str, LayerParams]
    out_formats: dict[str, ActFormat]
    input_format: ActFormat = IMAGE_FORMAT
    pe_variant: str = "auto"
    formats: dict[str, ActFormat] = field(init=False, repr=False)
    fused: dict[str, BnsFused] = field(init=False, repr=False)

    def __post_init__(self):
        net = self.network
        fmts = {INPUT: self.input_format}
        fused = {}
        for i, layer in enumerate(net.layers):
            src_fmt = fmts[net.predecessors(i)[0]]
            if layer.is_compute:
                if layer.name not in self.params:
                    raise EngineError(f"missing parameters for layer {layer.name!r}")
                if layer.name not in self.out_formats:
                    raise EngineError(f"missing output format for layer {layer.name!r}")
                p = self.params[layer.name]
                expected = _filter_shape(net, i)
                if p.filters.codes.reshape(p.filters.features, -1).shape != (expected[0], int(np.prod(expected[1:]))):
                    raise EngineError(f"{layer.name}: filter shape {p.filters.codes.shape} does not match {expected}")
                fused[layer.name] = bns_mod.fold_input_scale(bns_mod.fuse(p.bn), src_fmt)
            elif layer.kind == "max-pool" and self.out_formats.get(layer.name, src_fmt) != src_fmt:
                raise EngineError(f"{layer.name}: max-pool cannot change the activation format")
            fmts[layer.name] = self.out_formats.get(layer.name, src_fmt)
        self.formats = fmts
        self.fused = fused

    def input_format_of(self, index: int) -> ActFormat:
        return self.formats[self.network.predecessors(index)[0]]


def _filter_shape(net: Network, index: int) -> tuple[int, ...]:
    layer = net.layers[index]
    if layer.kind == "fc":
        return (layer.out_channels, layer.in_channels, 1, 1)
    kh, kw = layer.kernel
    return (layer.out_channels, layer.in_channels // layer.groups, kh, kw)


@dataclass
class LayerTrace:
    name: str
    acc: np.ndarray | None
    bns: np.ndarray | None
    codes: np.ndarray


def _patches(codes: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, C, H, W) -> (N, OH, OW, C, kh, kw) windows; pads with code 0."""
    if pad:
        codes = np.pad(codes, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(codes, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def _dot_all(kind: str, acts: np.ndarray, weights: QuantizedFilterBank) -> np.ndarray:
    """acts (P, K) x filters (F, K) -> (P, F) with the selected PE engine."""
    wcodes = weights.codes.reshape(weights.features, -1)
    stored = weights.stored_codes().reshape(weights.features, -1)
    P = acts.shape[0]
    out = np.empty((P, weights.features), dtype=np.int64)
    if kind == "dsp":
        pad = (-P) % LANES
        a = np.concatenate([acts, np.zeros((pad, acts.shape[1]), dtype=acts.dtype)])
        lanes = a.reshape(-1, LANES, a.shape[1]).transpose(0, 2, 1)
    # one output feature per step: features are independent PE columns
    for f in range(weights.features):
        if kind == "ref":
            out[:, f] = dot_ref(acts, wcodes[f])
        elif kind == "ternary_mux":
            out[:, f] = dot_ternary_mux(acts, wcodes[f])
        elif kind == "binary_mux":
            out[:, f] = dot_binary_mux(acts, stored[f])
        elif kind == "xnor":
            out[:, f] = dot_xnor_popcount(acts, stored[f])
        elif kind == "dsp":
            out[:, f] = dot_dsp_packed(lanes, wcodes[f]).reshape(-1)[:P]
        else:
            raise EngineError(f"unknown PE engine {kind!r}")
    return out


def _bipolar_values(codes: np.ndarray) -> np.ndarray:
    return 2 * codes - 1


def _conv_acc(bundle: ModelBundle, index: int, x: QTensor, variant: str) -> np.ndarray:
    net = bundle.network
    layer = net.layers[index]
    p = bundle.params[layer.name]
    fmt = x.format
    codes = x.codes
    if layer.kind == "fc":
        codes = codes.reshape(codes.shape[0], -1, 1, 1)
        kh = kw = 1
        stride, pad, groups = 1, 0, 1
    else:
        kh, kw = layer.kernel
        stride, pad, groups = layer.stride, layer.padding, layer.groups
    win = _patches(codes, kh, kw, stride, pad)
    n, oh, ow = win.shape[:3]
    kind = select_dot(fmt, p.filters.format, variant if variant != "dsp" or _dsp_ok(fmt, p) else "auto")
    filt = p.filters.codes.reshape(_filter_shape(net, index))
    cg = filt.shape[1]
    fg = layer.out_channels // groups
    acc = np.empty((n, layer.out_channels, oh, ow), dtype=np.int64)
    for g in range(groups):
        a = win[:, :, :, g * cg:(g + 1) * cg].reshape(n * oh * ow, -1)
        if fmt.bipolar and kind != "xnor":
            a = _bipolar_values(a)
        bank = QuantizedFilterBank(filt[g * fg:(g + 1) * fg], p.filters.alpha[g * fg:(g + 1) * fg], p.filters.format)
        acc[:, g * fg:(g + 1) * fg] = _dot_all(kind, a, bank).reshape(n, oh, ow, fg).transpose(0, 3, 1, 2)
    width = p.acc_bits or acc_width(fmt.bits, p.filters.format.effective_bits, cg * kh * kw)
    try:
        check_accumulator(acc, width)
    except AccumulatorOverflow as exc:
        raise AccumulatorOverflow(f"{layer.name}: {exc}") from None
    return acc


def _dsp_ok(fmt: ActFormat, p: LayerParams) -> bool:
    try:
        select_dot(fmt, p.filters.format, "dsp")
        return True
    except ValueError:
        return False


def _rational(x: QTensor) -> tuple[np.ndarray, int]:
    """Exact decoded value as numerator array over a common denominator."""
    if x.format.bipolar:
        return _bipolar_values(x.codes), 1
    return x.codes, x.format.levels


def _requantize_exact(num: np.ndarray, den: int, fmt: ActFormat) -> np.ndarray:
    """ReLU then clip-and-round of ``num / den`` without floating point."""
    if fmt.bipolar:
        return (num > 0).astype(np.int64)
    num = np.maximum(num, 0)
    L = fmt.levels
    code = (2 * num * L + den) // (2 * den)
    return np.minimum(code, L)


def _max_pool(layer: LayerSpec, x: QTensor) -> np.ndarray:
    kh, kw = layer.kernel
    win = _patches(x.codes, kh, kw, layer.stride, layer.padding)
    return win.max(axis=(4, 5)).transpose(0, 3, 1, 2)


def _avg_pool(layer: LayerSpec, x: QTensor, out_fmt: ActFormat) -> np.ndarray:
    kh, kw = layer.kernel
    num, den = _rational(x)
    if layer.padding:
        # padded positions hold code 0 in the input format
        pad_val = -1 if x.format.bipolar else 0
        num = np.pad(num, ((0, 0), (0, 0), (layer.padding,) * 2, (layer.padding,) * 2), constant_values=pad_val)
    win = np.lib.stride_tricks.sliding_window_view(num, (kh, kw), axis=(2, 3))[:, :, ::layer.stride, ::layer.stride]
    total = win.sum(axis=(4, 5))
    return _requantize_exact(total, den * kh * kw, out_fmt)


def _eltwise_add(xs: Sequence[QTensor], out_fmt: ActFormat) -> np.ndarray:
    den = 1
    for x in xs:
        den = np.lcm(den, _rational(x)[1])
    total = 0
    for x in xs:
        n, d = _rational(x)
        total = total + n * (den // d)
    return _requantize_exact(np.asarray(total), int(den), out_fmt)


def run_layer(bundle: ModelBundle, layer_index: int, inputs, *, variant: str | None = None,
              trace: list | None = None) -> QTensor:
    """Run one layer on its input tensor(s) and return the output codes."""
    net = bundle.network
    layer = net.layers[layer_index]
    xs = [inputs] if isinstance(inputs, QTensor) else list(inputs)
    srcs = net.predecessors(layer_index)
    if len(xs) != len(srcs):
        raise EngineError(f"{layer.name}: expected {len(srcs)} input tensors, got {len(xs)}")
    for x, s in zip(xs, srcs):
        if x.format != bundle.formats[s]:
            raise EngineError(f"{layer.name}: input format {x.format} but expected {bundle.formats[s]}")
        if tuple(x.shape[1:]) != net.shapes[s]:
            raise EngineError(f"{layer.name}: input shape {x.shape[1:]} but expected {net.shapes[s]}")
        if x.codes.size and x.codes.min() < 0:
            raise EngineError(f"{layer.name}: inputs to the PE array must be unsigned codes")
    out_fmt = bundle.formats[layer.name]
    acc = val = None
    if layer.is_compute:
        acc = _conv_acc(bundle, layer_index, xs[0], variant or bundle.pe_variant)
        val = bns_mod.apply(acc, bundle.fused[layer.name])
        codes = quantize_act_codes(val, out_fmt)
    elif layer.kind == "max-pool":
        codes = _max_pool(layer, xs[0])
    elif layer.kind == "avg-pool":
        codes = _avg_pool(layer, xs[0], out_fmt)
    elif layer.kind == "eltwise-add":
        codes = _eltwise_add(xs, out_fmt)
    else:
        num, den = _rational(xs[0])
        codes = _requantize_exact(num, den, out_fmt)
    if trace is not None:
        trace.append(LayerTrace(layer.name, acc, val, codes))
    return QTensor(codes, out_fmt)


def run_network(bundle: ModelBundle, x: QTensor, trace: bool = False, *, variant: str | None = None):
    """Run the whole graph; returns the output tensor, plus the trace list if asked."""
    net = bundle.network
    if tuple(x.shape[1:]) != net.input_shape:
        raise EngineError(f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    if x.format != bundle.input_format:
        raise EngineError(f"input format {x.format} does not match bundle input {bundle.input_format}")
    outputs = {INPUT: x}
    records: list[LayerTrace] | None = [] if trace else None
    for i, layer in enumerate(net.layers):
        ins = [outputs[s] for s in net.predecessors(i)]
        outputs[layer.name] = run_layer(bundle, i, ins if len(ins) > 1 else ins[0],
                                        variant=variant, trace=records)
    y = outputs[net.layers[-1].name] if net.layers else x
    return (y, records) if trace else y


# -- float64 oracle -------------------------------------------------------------

def _decode_pad_value(fmt: ActFormat) -> float:
    return -1.0 if fmt.bipolar else 0.0


def _quantize_real(v: np.ndarray, fmt: ActFormat) -> np.ndarray:
    if fmt.bipolar:
        return np.where(v > 0, 1.0, -1.0)
    L = fmt.levels
    return np.floor(np.minimum(np.maximum(0.0, v), 1.0) * L + 0.5) / L


def _conv_real(x: np.ndarray, w: np.ndarray, stride: int, pad: int, groups: int, pad_value: float) -> np.ndarray:
    n, c, h, wd = x.shape
    f, cg, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=pad_value)
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, oh, ow))
    fg = f // groups
    for g in range(groups):
        xg = x[:, g * cg:(g + 1) * cg]
        wg = w[g * fg:(g + 1) * fg]
        for i in range(kh):
            for j in range(kw):
                sl = xg[:, :, i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]
                out[:, g * fg:(g + 1) * fg] += np.einsum("nchw,fc->nfhw", sl, wg[:, :, i, j])
    return out


def reference_layer(bundle: ModelBundle, index: int, xs: Sequence[np.ndarray]):
    """One layer of the oracle; returns (pre-BN conv output or None, pre-quantization values, output)."""
    net = bundle.network
    layer = net.layers[index]
    in_fmt = bundle.input_format_of(index)
    out_fmt = bundle.formats[layer.name]
    conv = None
    if layer.is_compute:
        p = bundle.params[layer.name]
        x = xs[0]
        w = p.filters.real_filters().reshape(_filter_shape(net, index))
        if layer.kind == "fc":
            x = x.reshape(x.shape[0], -1, 1, 1)
            conv = _conv_real(x, w, 1, 0, 1, 0.0)
        else:
            conv = _conv_real(x, w, layer.stride, layer.padding, layer.groups, _decode_pad_value(in_fmt))
        # weights above already carry alpha, so the BN step sees alpha * acc
        bn = p.bn
        shape = (1, -1, 1, 1)
        pre = bn.y.reshape(shape) * ((conv - bn.w.reshape(shape)) / bn.x.reshape(shape)) + bn.z.reshape(shape)
    elif layer.kind == "max-pool":
        kh, kw = layer.kernel
        x = xs[0]
        if layer.padding:
            x = np.pad(x, ((0, 0), (0, 0), (layer.padding,) * 2, (layer.padding,) * 2), constant_values=-np.inf)
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::layer.stride, ::layer.stride]
        out = win.max(axis=(4, 5))
        # padding never wins: the window always holds at least one real value
        return None, out, out
    elif layer.kind == "avg-pool":
        kh, kw = layer.kernel
        x = xs[0]
        if layer.padding:
            x = np.pad(x, ((0, 0), (0, 0), (layer.padding,) * 2, (layer.padding,) * 2),
                       constant_values=_decode_pad_value(in_fmt))
        win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::layer.stride, ::layer.stride]
        pre = win.mean(axis=(4, 5))
    elif layer.kind == "eltwise-add":
        pre = sum(xs)
    else:
        pre = xs[0]
    return conv, pre, _quantize_real(pre, out_fmt)


def run_reference_fp32(bundle: ModelBundle, x: np.ndarray, trace: bool = False):
    """Real-valued evaluation of the bundle with unfused normalization.

    ``x`` holds real input values (decoded image codes).  Returns the output
    values, plus a list of per-layer pre-quantization arrays if ``trace``.
    """
    net = bundle.network
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape[1:]) != net.input_shape:
        raise EngineError(f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    outputs = {INPUT: x}
    pres = []
    for i, layer in enumerate(net.layers):
        _, pre, out = reference_layer(bundle, i, [outputs[s] for s in net.predecessors(i)])
        outputs[layer.name] = out
        pres.append(pre)
    y = outputs[net.layers[-1].name] if net.layers else x
    return (y, pres) if trace else y


def real_to_codes(values: np.ndarray, fmt: ActFormat) -> np.ndarray:
    """Codes of values already on the quantization grid."""
    if fmt.bipolar:
        return (np.asarray(values) > 0).astype(np.int64)
    return np.rint(np.asarray(values) * fmt.levels).astype(np.int64)


def oracle_match(bundle: ModelBundle, x: QTensor, variant: str | None = None) -> tuple[int, int]:
    """(matching, total) output codes between the integer pipeline and the oracle."""
    got = run_network(bundle, x, variant=variant).codes
    ref = real_to_codes(run_reference_fp32(bundle, x.decode()), bundle.formats[bundle.network.layers[-1].name])
    return int((got == ref).sum()), int(got.size)
