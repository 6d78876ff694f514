"""Throughput model for PE arrays on FPGA devices.

The array size comes from the logic budget: ``floor(budget * ALMs / ALMs_per_dot)``
dot units of ``words_per_dot`` MACs each, plus optional packed-DSP MACs.  Peak
ops/s is ``2 * MACs_per_cycle * fmax``; achieved is peak times a mapping
efficiency; Eq TOPS divides achieved by the widening factor squared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace, asdict
from functools import lru_cache
from typing import Callable, Iterable, Sequence

from .fixtures import fixture_dir, load_fixture, load_yaml
from .netgraph import Network, builtin, ops_count, widen as widen_net
from .pe import PeConfig, lookup_pe

NR = "NR"
DEFAULT_BUDGET = 0.80
DEFAULT_EFFICIENCY = 0.60
SORT_KEYS = ("eq_tops", "throughput", "images_per_sec")


class DseError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    dsp_blocks: int
    alms: int
    m20k_kbits: float
    mlab_kbits: float
    fmax_hz: float

    def __post_init__(self):
        for k in ("dsp_blocks", "alms", "m20k_kbits", "mlab_kbits", "fmax_hz"):
            if not getattr(self, k) > 0:
                raise DseError(f"device {self.name}: {k} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceSpec":
        try:
            return cls(str(d["name"]), int(d["dsp_blocks"]), int(d["alms"]), float(d["m20k_kbits"]),
                       float(d["mlab_kbits"]), float(d["fmax_mhz"]) * 1e6)
        except KeyError as exc:
            raise DseError(f"device spec missing {exc}") from None


@dataclass(frozen=True)
class DseParams:
    alm_budget_fraction: float = DEFAULT_BUDGET
    efficiency: float | None = None
    use_dsp_packing: bool = False
    widen: int = 1

    def __post_init__(self):
        if not 0 < self.alm_budget_fraction <= 1:
            raise DseError("alm_budget_fraction must lie in (0, 1]")
        if self.efficiency is not None and not 0 <= self.efficiency <= 1:
            raise DseError("efficiency must lie in [0, 1]")
        if self.widen not in (1, 2, 3):
            raise DseError("widen must be 1, 2 or 3")


@dataclass
class Projection:
    device: str
    pe: str
    dot_units: int
    macs_per_cycle: int
    peak_ops_per_sec: float
    alms_used: int
    dsps_used: int
    network: str | None = None
    widen: int = 1
    efficiency: float | None = None
    efficiency_source: str | None = None
    achieved_ops_per_sec: float | None = None
    eq_tops: float | None = None
    images_per_sec: float | None = None
    accuracy: float | str | None = None
    act: str = ""
    weight: str = ""
    words_per_dot: int = 0

    @property
    def peak_tops(self) -> float:
        return self.peak_ops_per_sec / 1e12

    @property
    def achieved_tops(self) -> float | None:
        return None if self.achieved_ops_per_sec is None else self.achieved_ops_per_sec / 1e12

    def row(self) -> dict:
        d = asdict(self)
        d["peak_tops"] = self.peak_tops
        d["achieved_tops"] = self.achieved_tops
        return d


def load_devices() -> dict[str, DeviceSpec]:
    return {d["name"]: DeviceSpec.from_dict(d) for d in load_fixture("devices.yaml")["devices"]}


def get_device(name_or_path: str) -> DeviceSpec:
    devices = load_devices()
    if name_or_path in devices:
        return devices[name_or_path]
    try:
        data = load_yaml(name_or_path)
    except OSError:
        raise DseError(f"unknown device {name_or_path!r}; known: {', '.join(devices)}") from None
    return DeviceSpec.from_dict(data.get("device", data))


def peak_throughput(dev: DeviceSpec, pe: PeConfig, p: DseParams = DseParams()) -> Projection:
    """Array geometry and peak ops/s; the achieved/normalized fields stay empty."""
    common = dict(device=dev.name, pe=pe.name, act=pe.act_label, weight=str(pe.weight),
                  words_per_dot=pe.words_per_dot)
    if pe.is_fp32:
        macs = dev.dsp_blocks
        return Projection(dot_units=dev.dsp_blocks, macs_per_cycle=macs, peak_ops_per_sec=2.0 * macs * dev.fmax_hz,
                          alms_used=0, dsps_used=dev.dsp_blocks, **common)
    packing = p.use_dsp_packing and pe.dsp_macs_per_block > 0
    if pe.alms_per_dot == 0 and not packing:
        raise DseError(f"{pe.name}: no ALM cost and no DSP packing, cannot size an array")
    budget = p.alm_budget_fraction * dev.alms
    dots = math.floor(budget / pe.alms_per_dot) if pe.alms_per_dot else 0
    macs = dots * pe.words_per_dot
    dsps = 0
    if packing:
        macs += dev.dsp_blocks * pe.dsp_macs_per_block
        dsps = dev.dsp_blocks
    return Projection(dot_units=dots, macs_per_cycle=macs, peak_ops_per_sec=2.0 * macs * dev.fmax_hz,
                      alms_used=dots * pe.alms_per_dot, dsps_used=dsps, **common)


def network_key(net: Network) -> str:
    return net.name.split("-")[0].lower()


@dataclass
class Calibration:
    """Per-(network, PE pair) mapping efficiencies and the documented regression setup."""

    table4: dict[tuple[str, str], float] = field(default_factory=dict)
    table5: dict[tuple[str, str], float] = field(default_factory=dict)
    default_efficiency: float = DEFAULT_EFFICIENCY
    alm_budget_fraction: float = DEFAULT_BUDGET
    arria10: dict = field(default_factory=dict)

    def lookup(self, network: str, pair: str) -> tuple[float, str]:
        key = (network, pair)
        if key in self.table4:
            return self.table4[key], "table4-calibrated"
        if key in self.table5:
            return self.table5[key], "table5-derived"
        return self.default_efficiency, "default"


@lru_cache(maxsize=None)
def _calibration_cached(_key) -> Calibration:
    cal = load_fixture("calibration.yaml")
    t5 = load_fixture("table5.yaml")
    table4 = {}
    for row in cal["table4"]["rows"]:
        for net in cal["table4"]["networks"]:
            table4[(net, row["pair"])] = float(row["efficiency"])
    table5 = {}
    for pair, per_net in t5["derived_efficiency"].items():
        for net, eta in per_net.items():
            table5[(net, pair)] = float(eta)
    return Calibration(table4, table5, float(cal["default_efficiency"]), float(cal["alm_budget_fraction"]),
                       dict(cal["arria10_regression"]))


def calibration() -> Calibration:
    return _calibration_cached(str(fixture_dir()))


def project(dev: DeviceSpec, net: Network, pe: PeConfig, p: DseParams = DseParams()) -> Projection:
    """Achieved throughput, Eq TOPS and images/s for ``net`` widened by ``p.widen``.

    With ``p.efficiency`` unset the calibrated efficiency for the
    (network, PE pair) is used, falling back to the default.
    """
    proj = peak_throughput(dev, pe, p)
    if p.efficiency is None:
        eta, source = calibration().lookup(network_key(net), pe.pair)
    else:
        eta, source = p.efficiency, "override"
    k = p.widen
    achieved = proj.peak_ops_per_sec * eta
    gops = ops_count(widen_net(net, k))
    return replace(proj, network=net.name, widen=k, efficiency=eta, efficiency_source=source,
                   achieved_ops_per_sec=achieved, eq_tops=achieved / (k * k * 1e12),
                   images_per_sec=achieved / (gops * 1e9) if gops else math.inf)


class AccuracyTable:
    """Top-1 accuracy per (network, widen, PE pair); missing or NR entries are unknown."""

    def __init__(self, entries: dict[tuple[str, int, str], float | str]):
        for key, v in entries.items():
            if v != NR and not 0 <= v <= 1:
                raise DseError(f"accuracy {v} for {key} outside [0, 1]")
        self.entries = dict(entries)

    def lookup(self, network: str, widen: int, pair: str) -> float | str:
        return self.entries.get((network, widen, pair), NR)

    @classmethod
    def load(cls) -> "AccuracyTable":
        entries: dict = {}
        t4 = load_fixture("table4.yaml")
        for row in t4["rows"]:
            for col, acc in zip(t4["columns"], row["accuracy"]):
                net, k = col.rsplit("-", 1)
                entries[(net, int(k.rstrip("x")), row["pair"])] = acc
        for e in load_fixture("accuracy_extra.yaml")["entries"]:
            entries[(e["network"], int(e["widen"]), e["pair"])] = e["accuracy"]
        return cls(entries)


def _sort_value(p: Projection, key: str) -> float:
    if key == "eq_tops":
        return p.eq_tops
    if key == "throughput":
        return p.achieved_ops_per_sec
    if key == "images_per_sec":
        return p.images_per_sec
    raise DseError(f"unknown sort key {key!r}; choose from {', '.join(SORT_KEYS)}")


def explore(dev: DeviceSpec, net: Network, pe_set: Sequence[PeConfig], widen_set: Iterable[int],
            p: DseParams = DseParams(), sort: str = "eq_tops",
            accuracy: AccuracyTable | None = None) -> list[Projection]:
    """Project every (PE, widen) combination, best first."""
    pe_set = list(pe_set)
    widen_set = list(widen_set)
    if not pe_set or not widen_set:
        raise DseError("explore needs at least one PE configuration and one widen factor")
    if sort not in SORT_KEYS:
        raise DseError(f"unknown sort key {sort!r}; choose from {', '.join(SORT_KEYS)}")
    acc = accuracy or AccuracyTable.load()
    out = []
    for pe in pe_set:
        for k in widen_set:
            proj = project(dev, net, pe, replace(p, widen=k))
            proj.accuracy = acc.lookup(network_key(net), k, pe.pair)
            out.append(proj)
    out.sort(key=lambda r: (-_sort_value(r, sort), r.pe, r.widen))
    return out


def _dominates(q, p) -> bool:
    return (q[0] >= p[0] and q[1] > p[1]) or (q[0] > p[0] and q[1] >= p[1])


def pareto(points: Sequence, key: Callable = lambda item: (item[0], item[1])) -> list:
    """Non-dominated (accuracy, throughput) items, accuracy ascending.

    Items whose accuracy is missing or NR are ignored; exact duplicates
    collapse to the first occurrence.
    """
    usable = []
    for item in points:
        a, t = key(item)
        if a is None or a == NR:
            continue
        a, t = float(a), float(t)
        if not (math.isfinite(a) and math.isfinite(t)):
            raise DseError(f"non-finite point {item!r}")
        usable.append((a, t, item))
    usable.sort(key=lambda r: (-r[0], -r[1]))
    frontier = []
    best = -math.inf
    last_acc = None
    for a, t, item in usable:
        if a == last_acc:
            continue
        last_acc = a
        if t > best:
            frontier.append(item)
            best = t
    frontier.reverse()
    return frontier


def pareto_brute_force(points: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """O(n^2) dominance filter used to check :func:`pareto`."""
    uniq = list(dict.fromkeys((float(a), float(t)) for a, t in points))
    keep = [p for p in uniq if not any(_dominates(q, p) for q in uniq)]
    return sorted(keep)


def regression_arria10_alexnet(efficiency: float | None = None) -> Projection:
    """The measured Arria 10 AlexNet 2xT design evaluated with the model.

    The device is pinned to the logic the design actually used, packing is on,
    and the efficiency comes from the calibration file unless given.
    """
    cfg = calibration().arria10
    base = load_devices()[cfg["device"]]
    dev = replace(base, alms=int(cfg["alms"]), fmax_hz=float(cfg["fmax_mhz"]) * 1e6)
    pe = lookup_pe(cfg["pe"])
    eta = float(cfg["efficiency"]) if efficiency is None else efficiency
    params = DseParams(alm_budget_fraction=float(cfg["alm_budget_fraction"]), efficiency=eta,
                       use_dsp_packing=bool(cfg["use_dsp_packing"]))
    return project(dev, builtin(cfg["network"]), pe, params)


def table4_reference() -> dict:
    return load_fixture("table4.yaml")


def table5_reference() -> dict:
    return load_fixture("table5.yaml")
