"""Small random models for equivalence testing and demos.

Batch-norm statistics are taken from the data actually flowing through each
layer, so activations land mostly inside the quantizer's range instead of
saturating.
"""

from __future__ import annotations

import numpy as np

from .bns import BnsRaw
from .engine import LayerParams, ModelBundle, reference_layer
from .netgraph import INPUT, LayerSpec, Network
from .numerics import (ActFormat, BINARY, TERNARY, QTensor, WeightFormat, QuantizedFilterBank,
                       quantize_weights)

# variant -> (weight formats, hidden activation widths, input width)
VARIANTS = {
    "ref": ((WeightFormat("int", 2), WeightFormat("int", 3), WeightFormat("int", 4), WeightFormat("int", 8)),
            (2, 3, 4, 8), 8),
    "ternary_mux": ((TERNARY,), (2, 3, 4, 8), 8),
    "binary_mux": ((BINARY,), (2, 3, 4, 8), 8),
    "xnor": ((BINARY,), (1,), 1),
    "dsp": ((TERNARY, WeightFormat("int", 2)), (2,), 2),
}


def _random_network(rng: np.random.Generator, max_layers: int = 4, max_features: int = 8) -> Network:
    c = int(rng.integers(1, 4))
    h = w = int(rng.integers(4, 9))
    n_layers = int(rng.integers(1, max_layers + 1))
    layers = []
    shape = (c, h, w)
    for i in range(n_layers):
        last = i == n_layers - 1
        cin, hh, ww = shape
        if last and rng.random() < 0.4:
            out = int(rng.integers(1, max_features + 1))
            layer = LayerSpec(f"fc{i}", "fc", out_channels=out, in_channels=cin * hh * ww)
        elif not last and hh >= 4 and rng.random() < 0.25:
            layer = LayerSpec(f"pool{i}", "max-pool", kernel=2, stride=2)
        else:
            k = int(rng.choice([1, 3])) if min(hh, ww) >= 3 else 1
            pad = int(rng.integers(0, 2)) if k == 3 else 0
            stride = 2 if min(hh, ww) >= 6 and rng.random() < 0.3 else 1
            out = int(rng.integers(1, max_features + 1))
            layer = LayerSpec(f"conv{i}", "conv", out_channels=out, in_channels=cin, kernel=k,
                              stride=stride, padding=pad)
        layers.append(layer)
        shape = Network("t", (c, h, w), tuple(layers)).shapes[layer.name]
    return Network("toy", (c, h, w), tuple(layers))


def random_input(rng: np.random.Generator, net: Network, fmt: ActFormat, batch: int = 2) -> QTensor:
    return QTensor(rng.integers(0, fmt.levels + 1, size=(batch, *net.input_shape)), fmt)


def random_bundle(rng: np.random.Generator, variant: str = "ternary_mux", batch: int = 2,
                  net: Network | None = None) -> tuple[ModelBundle, QTensor]:
    """Random model for ``variant`` plus an input tensor it was calibrated on."""
    wfmts, act_bits, in_bits = VARIANTS[variant]
    net = net or _random_network(rng)
    in_fmt = ActFormat(in_bits)
    pe_variant = variant if variant in ("ref", "dsp") else "auto"
    x = random_input(rng, net, in_fmt, batch)
    params: dict[str, LayerParams] = {}
    out_formats: dict[str, ActFormat] = {}
    values = {INPUT: x.decode()}
    for i, layer in enumerate(net.layers):
        if layer.is_compute:
            wfmt = wfmts[int(rng.integers(len(wfmts)))]
            kh, kw = layer.kernel if layer.kind == "conv" else (1, 1)
            real = rng.normal(size=(layer.out_channels, layer.in_channels // layer.groups, kh, kw))
            bank = quantize_weights(real, wfmt)
            if layer.kind == "fc":
                bank = QuantizedFilterBank(bank.codes.reshape(layer.out_channels, -1, 1, 1), bank.alpha, wfmt)
            out_formats[layer.name] = ActFormat(int(rng.choice(act_bits)))
            params[layer.name] = LayerParams(bank, BnsRaw.identity(layer.out_channels, bank.alpha))
        head = Network(net.name, net.input_shape, net.layers[:i + 1])
        probe = ModelBundle(head, params, out_formats, in_fmt, pe_variant)
        conv, _, _ = reference_layer(probe, i, [values[s] for s in net.predecessors(i)])
        if layer.is_compute:
            mu = conv.mean(axis=(0, 2, 3))
            sd = conv.std(axis=(0, 2, 3)) + 0.1
            f = layer.out_channels
            y = rng.uniform(0.2, 0.45, f) * rng.choice([1.0, 1.0, -1.0], f)
            z = rng.uniform(0.25, 0.6, f)
            params[layer.name] = LayerParams(params[layer.name].filters,
                                             BnsRaw(mu, sd, y, z, params[layer.name].filters.alpha))
            probe = ModelBundle(head, params, out_formats, in_fmt, pe_variant)
        values[layer.name] = reference_layer(probe, i, [values[s] for s in net.predecessors(i)])[2]
    return ModelBundle(net, params, out_formats, in_fmt, pe_variant), x


def tie_distance(bundle: ModelBundle, pres: list[np.ndarray]) -> float:
    """Smallest distance of any pre-quantization value to a rounding tie point."""
    best = np.inf
    for layer, pre in zip(bundle.network.layers, pres):
        if layer.kind == "max-pool":
            continue
        fmt = bundle.formats[layer.name]
        if fmt.bipolar:
            d = np.abs(pre)
        else:
            L = fmt.levels
            v = np.clip(pre, 0.0, 1.0) * L
            d = np.abs(v - (np.floor(v) + 0.5)) / L
            inside = (pre > 0) & (pre < 1)
            d = np.where(inside, d, np.inf)
        if d.size:
            best = min(best, float(d.min()))
    return best


def tie_free_bundle(rng: np.random.Generator, variant: str, margin: float = 1e-4, tries: int = 200):
    """Draw random (bundle, input) pairs until no value sits within ``margin`` of a tie."""
    from .engine import run_reference_fp32

    for _ in range(tries):
        bundle, x = random_bundle(rng, variant)
        _, pres = run_reference_fp32(bundle, x.decode(), trace=True)
        if tie_distance(bundle, pres) > margin:
            return bundle, x
    raise RuntimeError("could not draw a tie-free model")
