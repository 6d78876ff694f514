"""Regenerate the golden trace used by the engine tests.

A 3-layer toy model (conv, max-pool, fc) is drawn from a fixed seed.  The
expected per-layer output codes come from the float64 oracle, not from the
integer pipeline under test.

    python tools/make_golden.py
"""

from pathlib import Path

import numpy as np
import yaml

from lpnn.engine import real_to_codes, reference_layer
from lpnn.formats import write_bundle, write_tensor
from lpnn.netgraph import INPUT, LayerSpec, Network
from lpnn.toy import random_bundle, tie_distance

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"
SEED = 20240611


def main():
    net = Network("golden", (2, 6, 6), (
        LayerSpec("conv0", "conv", out_channels=4, in_channels=2, kernel=3, padding=1),
        LayerSpec("pool0", "max-pool", kernel=2, stride=2),
        LayerSpec("fc0", "fc", out_channels=3, in_channels=4 * 3 * 3),
    ))
    rng = np.random.default_rng(SEED)
    while True:
        bundle, x = random_bundle(rng, "ternary_mux", net=net)
        values = {INPUT: x.decode()}
        pres, golden = [], {}
        for i, layer in enumerate(net.layers):
            _, pre, out = reference_layer(bundle, i, [values[s] for s in net.predecessors(i)])
            values[layer.name] = out
            pres.append(pre)
            golden[layer.name] = real_to_codes(out, bundle.formats[layer.name]).reshape(-1).tolist()
        if tie_distance(bundle, pres) > 1e-3:
            break
    OUT.mkdir(parents=True, exist_ok=True)
    write_bundle(OUT / "golden_bundle.yaml", bundle)
    write_tensor(OUT / "golden_input.lpqt", x)
    header = f"# per-layer output codes from the float64 oracle, seed {SEED}\n"
    (OUT / "golden_trace.yaml").write_text(header + yaml.safe_dump(golden, default_flow_style=None, width=120))


if __name__ == "__main__":
    main()
