"""Regenerate calibration.yaml and table5.yaml from the transcribed tables.

Efficiencies are ratios of published throughput to the model's peak at the
default geometry (80% ALM budget, widest dot per PE pair, no DSP packing).

    python tools/derive_calibration.py
"""

from pathlib import Path

import yaml

from lpnn.dse import DEFAULT_BUDGET, DEFAULT_EFFICIENCY, DseParams, load_devices, peak_throughput
from lpnn.netgraph import builtin, ops_count
from lpnn.pe import lookup_pe

DATA = Path(__file__).resolve().parents[1] / "src" / "lpnn" / "data"
HERE = Path(__file__).resolve().parent

ARRIA_MODELED_TOPS = 4.9


def _flow(rows):
    return yaml.safe_dump(rows, sort_keys=False, default_flow_style=None, width=140)


def main():
    s10 = load_devices()["stratix10-gx2800"]
    params = DseParams(alm_budget_fraction=DEFAULT_BUDGET)
    t4 = yaml.safe_load((DATA / "table4.yaml").read_text())

    rows = []
    for r in t4["rows"]:
        pe = lookup_pe(r["pair"])
        peak = peak_throughput(s10, pe, params).peak_tops
        target = r["eq_tops"][0]
        eta = 1.0 if pe.is_fp32 else round(target / peak, 4)
        rows.append({"pair": r["pair"], "pe": pe.name, "eq_tops": target, "peak_tops": round(peak, 3),
                     "efficiency": eta})

    arria = load_devices()["arria10-gx1150"]
    from dataclasses import replace
    arria = replace(arria, alms=150000, fmax_hz=275e6)
    apeak = peak_throughput(arria, lookup_pe("2xT/64"),
                            DseParams(alm_budget_fraction=1.0, use_dsp_packing=True)).peak_tops

    cal = (
        "# Mapping-efficiency calibration for the throughput model.\n"
        "# table4: efficiency = published ResNet-34 1x Eq TOPS (Table IV) / model peak on\n"
        "#   stratix10-gx2800 at the default 0.80 ALM budget, widest dot per pair, no\n"
        "#   DSP packing.  FP32 is DSP-bound and reported at peak (efficiency 1.0).\n"
        "#   ResNet-50 shares the ResNet-34 values (identical Eq TOPS columns).\n"
        "# arria10_regression: the AlexNet 2xT build of Table III, with the ALM pool\n"
        "#   pinned to the 150,000 ALMs it used, fmax 275 MHz and DSP packing on.\n"
        f"#   efficiency = modeled {ARRIA_MODELED_TOPS} TOPS / model peak ({apeak:.3f} TOPS).\n"
        "#   Measured 3,700 images/s is the check target, not an input.\n"
        "# Regenerate with tools/derive_calibration.py.\n"
    )
    body = {
        "alm_budget_fraction": DEFAULT_BUDGET,
        "default_efficiency": DEFAULT_EFFICIENCY,
        "table4": {"device": s10.name, "networks": ["resnet34", "resnet50"], "rows": rows},
        "arria10_regression": {
            "device": "arria10-gx1150", "network": "alexnet", "pe": "2xT/64", "alms": 150000, "fmax_mhz": 275,
            "alm_budget_fraction": 1.0, "use_dsp_packing": True, "modeled_tops": ARRIA_MODELED_TOPS,
            "peak_tops": round(apeak, 3), "efficiency": round(ARRIA_MODELED_TOPS / apeak, 4),
            "measured_images_per_sec": 3700,
        },
    }
    (DATA / "calibration.yaml").write_text(cal + _flow(body))

    raw_text = (HERE / "table5_raw.yaml").read_text()
    raw = yaml.safe_load(raw_text)
    gops = {n: ops_count(builtin(n)) for n in ("resnet34", "resnet50", "alexnet")}
    derived = {}
    for r in raw["rows"]:
        pe = lookup_pe(r["pair"])
        peak = peak_throughput(s10, pe, params).peak_ops_per_sec
        derived[r["pair"]] = {n: round(r[n][0] * gops[n] * 1e9 / peak, 4) for n in gops}
    header = "".join(l + "\n" for l in raw_text.splitlines() if l.startswith("#"))
    header += ("# derived_efficiency: S10 b1 images/s x model GOPs per image / model peak at the\n"
               "#   default geometry.  These do not agree with the Table IV calibration and are\n"
               "#   kept as fixture data, not as prediction targets.\n")
    out = {k: v for k, v in raw.items()}
    out["gops_per_image"] = {n: round(g, 6) for n, g in gops.items()}
    out["derived_efficiency"] = derived
    (DATA / "table5.yaml").write_text(header + _flow(out))


if __name__ == "__main__":
    main()
