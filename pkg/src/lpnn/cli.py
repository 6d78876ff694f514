"""Command-line entry point: ``lpnn {quantize,simulate,explore,frontier,regression}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data or validation error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dse
from .engine import EngineError, run_network, run_reference_fp32, real_to_codes
from .formats import FormatError, read_bundle, read_tensor, write_tensor
from .netgraph import TopologyError, resolve_network
from .numerics import ActFormat, QTensor, QuantizationError, quantize_act_codes
from .pe import AccumulatorOverflow, PEError, lookup_pe, pe_catalog, table4_set

log = logging.getLogger("lpnn")

EXIT_USAGE = 2
EXIT_DATA = 3

EXPLORE_COLUMNS = ("pe", "act", "weight", "words", "widen", "dots", "peak_tops", "achieved_tops", "eq_tops",
                   "images_per_sec", "accuracy", "alms", "dsps", "efficiency", "efficiency_source")
FRONTIER_COLUMNS = ("network", "pe", "widen", "accuracy", "throughput", "metric")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(v):
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return f"{v:.4f}"
    return "" if v is None else str(v)


def render_rows(rows: list[dict], columns, fmt: str) -> str:
    if fmt == "json":
        clean = [{c: (None if isinstance(r.get(c), float) and math.isinf(r[c]) else r.get(c)) for c in columns}
                 for r in rows]
        return json.dumps(clean, indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t" if fmt == "tsv" else ",", lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _emit(text: str, output: str | None):
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


# -- quantize -------------------------------------------------------------------

def cmd_quantize(args) -> int:
    fmt = ActFormat(args.bits)
    values = []
    try:
        lines = Path(args.values).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read {args.values}: {exc}", EXIT_USAGE) from None
    for n, line in enumerate(lines, 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            v = float(text)
        except ValueError:
            raise CliError(f"{args.values}:{n}: not a number: {text!r}", EXIT_USAGE) from None
        if math.isnan(v):
            raise CliError(f"{args.values}:{n}: NaN is not quantizable", EXIT_USAGE)
        values.append(v)
    codes = quantize_act_codes(np.asarray(values, dtype=np.float64), fmt)
    _emit("".join(f"{c}\n" for c in codes.tolist()), args.output)
    return 0


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        bundle = read_bundle(args.bundle)
        x = read_tensor(args.input)
        if not isinstance(x, QTensor):
            raise FormatError("input tensor must hold activation codes")
        result = run_network(bundle, x, trace=bool(args.trace), variant=args.variant)
    except OSError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    except (FormatError, EngineError, QuantizationError, AccumulatorOverflow, PEError, TopologyError) as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    y, records = result if args.trace else (result, None)
    write_tensor(args.output, y, packed=args.packed)
    report = {"output": str(args.output), "shape": list(y.shape), "bits": y.format.bits}
    if records is not None:
        tdir = Path(args.trace)
        tdir.mkdir(parents=True, exist_ok=True)
        for i, rec in enumerate(records):
            stem = tdir / f"{i:03d}_{rec.name}"
            if rec.acc is not None:
                write_tensor(f"{stem}_acc.lpqt", rec.acc)
                write_tensor(f"{stem}_bns.lpqt", rec.bns)
            write_tensor(f"{stem}_out.lpqt", QTensor(rec.codes, bundle.formats[rec.name]))
        report["trace"] = str(tdir)
    if args.oracle:
        ref = run_reference_fp32(bundle, x.decode())
        ref_codes = real_to_codes(ref, y.format)
        match = int((ref_codes == y.codes).sum())
        report.update(oracle_match=match, oracle_total=int(y.codes.size),
                      oracle_mismatch=int(y.codes.size) - match)
    sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")
    return 0


# -- explore ----------------------------------------------------------------------

def _pe_set(spec: str):
    key = spec.strip().lower()
    if key == "all":
        return [lookup_pe("fp32"), *pe_catalog()]
    if key == "table4":
        return table4_set()
    try:
        return [lookup_pe(name) for name in spec.split(",") if name.strip()]
    except PEError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad widen list {text!r}", EXIT_USAGE) from None
    if not vals or any(v not in (1, 2, 3) for v in vals):
        raise CliError("widen factors must be drawn from 1, 2, 3", EXIT_USAGE)
    return vals


def _setup(args):
    try:
        dev = dse.get_device(args.device)
    except dse.DseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    try:
        net = resolve_network(args.network)
    except OSError:
        raise CliError(f"unknown network {args.network!r}", EXIT_USAGE) from None
    except TopologyError as exc:
        raise CliError(str(exc), EXIT_USAGE if "unknown" in str(exc) else EXIT_DATA) from None
    try:
        params = dse.DseParams(alm_budget_fraction=args.budget, efficiency=args.eta,
                               use_dsp_packing=args.packing)
    except dse.DseError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    return dev, net, params


def projection_row(p: dse.Projection) -> dict:
    return {"pe": p.pe, "act": p.act, "weight": p.weight, "words": p.words_per_dot, "widen": p.widen,
            "dots": p.dot_units, "peak_tops": p.peak_tops, "achieved_tops": p.achieved_tops,
            "eq_tops": p.eq_tops, "images_per_sec": p.images_per_sec,
            "accuracy": p.accuracy, "alms": p.alms_used, "dsps": p.dsps_used,
            "efficiency": p.efficiency, "efficiency_source": p.efficiency_source}


def cmd_explore(args) -> int:
    dev, net, params = _setup(args)
    rows = dse.explore(dev, net, _pe_set(args.pe), _int_list(args.wide), params, sort=args.sort)
    _emit(render_rows([projection_row(r) for r in rows], EXPLORE_COLUMNS, args.format), args.output)
    return 0


# -- frontier ---------------------------------------------------------------------

def fixture_points(network: str) -> list[dict]:
    """Accuracy/throughput points taken from the transcribed tables."""
    key = network.lower().replace("-", "")
    points = []
    if key in ("resnet34", "resnet50"):
        t4 = dse.table4_reference()
        for row in t4["rows"]:
            for col, eq, acc in zip(t4["columns"], row["eq_tops"], row["accuracy"]):
                net, k = col.rsplit("-", 1)
                if net == key and dse.NR not in (eq, acc):
                    points.append({"network": net, "pe": row["pair"], "widen": int(k.rstrip("x")),
                                   "accuracy": acc, "throughput": float(eq), "metric": "eq_tops"})
        return points
    if key == "alexnet":
        t5 = dse.table5_reference()
        s10 = dse.load_devices()["stratix10-gx2800"]
        img = {r["pair"]: r["alexnet"][0] for r in t5["rows"]}
        acc = dse.AccuracyTable.load()
        for (net, k, pair), a in sorted(acc.entries.items()):
            if net != "alexnet" or a == dse.NR:
                continue
            if k == 1:
                thr = float(img[pair])
            else:
                eta = t5["derived_efficiency"][pair]["alexnet"]
                thr = dse.project(s10, resolve_network("alexnet"), lookup_pe(pair),
                                  dse.DseParams(efficiency=eta, widen=k)).images_per_sec
            points.append({"network": net, "pe": pair, "widen": k, "accuracy": a, "throughput": thr,
                           "metric": "images_per_sec"})
        return points
    raise CliError(f"no fixture points for network {network!r}", EXIT_USAGE)


def _csv_points(path: str) -> list[dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_USAGE) from None
    points = []
    reader = csv.DictReader(io.StringIO(text))
    for n, r in enumerate(reader, 2):
        try:
            acc = r["accuracy"].strip()
            points.append({"network": r.get("network", ""), "pe": r.get("pe", ""), "widen": r.get("widen", ""),
                           "accuracy": dse.NR if acc.upper() == dse.NR else float(acc),
                           "throughput": float(r["throughput"]), "metric": r.get("metric", "")})
        except (KeyError, ValueError, AttributeError):
            raise CliError(f"{path}:{n}: need numeric accuracy and throughput columns", EXIT_DATA) from None
    return points


def cmd_frontier(args) -> int:
    src = args.points_from
    if src == "fixtures":
        points = fixture_points(args.network)
    elif src == "explore":
        dev, net, params = _setup(args)
        rows = dse.explore(dev, net, table4_set(), (1, 2, 3), params, sort="images_per_sec")
        points = [{"network": dse.network_key(net), "pe": r.pe, "widen": r.widen, "accuracy": r.accuracy,
                   "throughput": r.images_per_sec, "metric": "images_per_sec"} for r in rows]
    else:
        points = _csv_points(src)
    try:
        front = dse.pareto(points, key=lambda p: (p["accuracy"], p["throughput"]))
    except dse.DseError as exc:
        raise CliError(str(exc), EXIT_DATA) from None
    if not front and args.format != "json":
        _emit("", args.output)
        return 0
    _emit(render_rows(front, FRONTIER_COLUMNS, args.format), args.output)
    return 0


# -- regression -------------------------------------------------------------------

REGRESSION_COLUMNS = ("device", "network", "pe", "dots", "macs_per_cycle", "alms", "dsps", "peak_tops",
                      "efficiency", "achieved_tops", "images_per_sec", "measured_images_per_sec",
                      "relative_error", "implied_tops_from_measured", "modeled_tops")


def cmd_regression(args) -> int:
    p = dse.regression_arria10_alexnet(args.eta)
    cfg = dse.calibration().arria10
    measured = float(cfg["measured_images_per_sec"])
    gops = p.achieved_ops_per_sec / p.images_per_sec / 1e9 if p.images_per_sec else float("nan")
    row = {"device": p.device, "network": p.network, "pe": p.pe, "dots": p.dot_units,
           "macs_per_cycle": p.macs_per_cycle, "alms": p.alms_used, "dsps": p.dsps_used,
           "peak_tops": p.peak_tops, "efficiency": p.efficiency, "achieved_tops": p.achieved_tops,
           "images_per_sec": p.images_per_sec, "measured_images_per_sec": measured,
           "relative_error": p.images_per_sec / measured - 1,
           "implied_tops_from_measured": measured * gops * 1e9 / 1e12,
           "modeled_tops": float(cfg["modeled_tops"])}
    _emit(render_rows([row], REGRESSION_COLUMNS, args.format), args.output)
    return 0


# -- argument parsing -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_model_args(p, network_required=True):
    p.add_argument("--device", default="stratix10-gx2800", help="device name or YAML spec file")
    p.add_argument("--network", required=network_required, help="alexnet | resnet34 | resnet50 | topology file")
    p.add_argument("--eta", type=float, default=None, help="mapping efficiency override")
    p.add_argument("--budget", type=float, default=dse.DEFAULT_BUDGET, help="fraction of ALMs for the PE array")
    p.add_argument("--packing", action="store_true", help="add packed-DSP multiplies where the PE supports it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lpnn", description="Low-precision CNN datapath simulator and FPGA throughput model")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    q = sub.add_parser("quantize", help="quantize real values (one per line) to activation codes")
    q.add_argument("values")
    q.add_argument("--bits", type=int, required=True, choices=range(1, 9), metavar="{1..8}")
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_quantize)

    s = sub.add_parser("simulate", help="run a model bundle on an LPQT input tensor")
    s.add_argument("bundle")
    s.add_argument("input")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--trace", metavar="DIR", help="write per-layer accumulator/BNS/output tensors here")
    s.add_argument("--oracle", action="store_true", help="compare against the float64 reference path")
    s.add_argument("--variant", choices=("auto", "ref", "dsp"), default=None)
    s.add_argument("--packed", action="store_true", help="write sub-byte packed output codes")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("explore", help="project throughput over PE configurations and widening factors")
    _add_model_args(e)
    e.add_argument("--pe", default="all", help="all | table4 | comma-separated names such as 2xT/64 or 1x1")
    e.add_argument("--wide", default="1", help="comma-separated widening factors, e.g. 1,2,3")
    e.add_argument("--sort", choices=dse.SORT_KEYS, default="eq_tops")
    e.add_argument("--format", choices=("csv", "json", "tsv"), default="csv")
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_explore)

    f = sub.add_parser("frontier", help="accuracy/throughput Pareto frontier")
    _add_model_args(f)
    f.add_argument("--points-from", default="fixtures", help="fixtures | explore | CSV file with accuracy,throughput")
    f.add_argument("--format", choices=("csv", "json", "tsv"), default="csv")
    f.add_argument("-o", "--output")
    f.set_defaults(func=cmd_frontier)

    r = sub.add_parser("regression", help="model the measured Arria 10 AlexNet 2xT design")
    r.add_argument("--eta", type=float, default=None)
    r.add_argument("--format", choices=("csv", "json", "tsv"), default="csv")
    r.add_argument("-o", "--output")
    r.set_defaults(func=cmd_regression)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"lpnn: error: {exc}", file=sys.stderr)
        return exc.code
    except (dse.DseError, QuantizationError) as exc:
        print(f"lpnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
