"""Network topologies, operation counting and widening."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .fixtures import load_fixture, load_yaml

COMPUTE_KINDS = ("conv", "fc")
POOL_KINDS = ("max-pool", "avg-pool")
PASSTHROUGH_KINDS = ("bns", "relu", "quantize")
LAYER_KINDS = COMPUTE_KINDS + POOL_KINDS + PASSTHROUGH_KINDS + ("eltwise-add",)
INPUT = "input"
BUILTINS = ("alexnet", "resnet34", "resnet50")


class TopologyError(ValueError):
    pass


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (list, tuple)):
        h, w = v
        return int(h), int(w)
    return int(v), int(v)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    out_channels: int = 0
    in_channels: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: int = 1
    padding: int = 0
    groups: int = 1
    inputs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise TopologyError(f"{self.name}: unknown layer kind {self.kind!r}")
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind in COMPUTE_KINDS:
            if self.out_channels < 1 or self.in_channels < 1:
                raise TopologyError(f"{self.name}: conv/fc needs positive channel counts")
            if self.in_channels % self.groups or self.out_channels % self.groups:
                raise TopologyError(f"{self.name}: channels not divisible by groups")
        if self.stride < 1 or self.padding < 0:
            raise TopologyError(f"{self.name}: bad stride/padding")

    @property
    def is_compute(self) -> bool:
        return self.kind in COMPUTE_KINDS

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        if self.kind == "fc":
            return 1, 1
        if self.kind in COMPUTE_KINDS + POOL_KINDS:
            kh, kw = self.kernel
            oh = (h + 2 * self.padding - kh) // self.stride + 1
            ow = (w + 2 * self.padding - kw) // self.stride + 1
            if oh < 1 or ow < 1:
                raise TopologyError(f"{self.name}: non-positive output size from input {h}x{w}")
            return oh, ow
        return h, w

    def macs(self, out_shape: tuple[int, int, int]) -> int:
        if not self.is_compute:
            return 0
        _, oh, ow = out_shape
        kh, kw = self.kernel if self.kind == "conv" else (1, 1)
        return kh * kw * (self.in_channels // self.groups) * self.out_channels * oh * ow

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "kind": self.kind}
        if self.is_compute:
            d.update({"in": self.in_channels, "out": self.out_channels})
        if self.kind in ("conv",) + POOL_KINDS:
            kh, kw = self.kernel
            d["kernel"] = kh if kh == kw else [kh, kw]
            if self.stride != 1:
                d["stride"] = self.stride
            if self.padding:
                d["pad"] = self.padding
        if self.groups != 1:
            d["groups"] = self.groups
        if self.inputs:
            d["inputs"] = list(self.inputs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {"name", "kind", "in", "out", "kernel", "stride", "pad", "groups", "inputs"}
        extra = set(d) - known
        if extra:
            raise TopologyError(f"layer {d.get('name')!r}: unknown keys {sorted(extra)}")
        try:
            return cls(
                name=str(d["name"]),
                kind=str(d["kind"]),
                out_channels=int(d.get("out", 0)),
                in_channels=int(d.get("in", 0)),
                kernel=d.get("kernel", 1),
                stride=int(d.get("stride", 1)),
                padding=int(d.get("pad", 0)),
                groups=int(d.get("groups", 1)),
                inputs=tuple(d.get("inputs", ())),
            )
        except KeyError as exc:
            raise TopologyError(f"layer missing required key {exc}") from None


@dataclass(frozen=True)
class Network:
    """Ordered layer list; ``inputs`` name predecessors, defaulting to the previous layer."""

    name: str
    input_shape: tuple[int, int, int]
    layers: tuple[LayerSpec, ...]
    shapes: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "shapes", self._propagate())

    def predecessors(self, index: int) -> tuple[str, ...]:
        layer = self.layers[index]
        if layer.inputs:
            return layer.inputs
        return (self.layers[index - 1].name,) if index else (INPUT,)

    def _propagate(self) -> dict[str, tuple[int, int, int]]:
        shapes = {INPUT: self.input_shape}
        for i, layer in enumerate(self.layers):
            if layer.name in shapes:
                raise TopologyError(f"duplicate layer name {layer.name!r}")
            srcs = self.predecessors(i)
            for s in srcs:
                # layers may only consume earlier outputs, so the graph is acyclic
                if s not in shapes:
                    raise TopologyError(f"{layer.name}: input {s!r} is not an earlier layer")
            in_shapes = [shapes[s] for s in srcs]
            if layer.kind == "eltwise-add":
                if len(in_shapes) < 2:
                    raise TopologyError(f"{layer.name}: eltwise-add needs two inputs")
                if any(sh != in_shapes[0] for sh in in_shapes):
                    raise TopologyError(f"{layer.name}: incompatible branch shapes {in_shapes}")
                shapes[layer.name] = in_shapes[0]
                continue
            if len(in_shapes) != 1:
                raise TopologyError(f"{layer.name}: expected one input")
            c, h, w = in_shapes[0]
            if layer.kind == "fc":
                if layer.in_channels != c * h * w:
                    raise TopologyError(f"{layer.name}: in={layer.in_channels} but input has {c * h * w} values")
                shapes[layer.name] = (layer.out_channels, 1, 1)
            elif layer.kind == "conv":
                if layer.in_channels != c:
                    raise TopologyError(f"{layer.name}: in={layer.in_channels} but input has {c} channels")
                shapes[layer.name] = (layer.out_channels, *layer.out_hw(h, w))
            else:
                shapes[layer.name] = (c, *layer.out_hw(h, w))
        return shapes

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes[self.layers[-1].name] if self.layers else self.input_shape

    def input_shape_of(self, index: int) -> tuple[int, int, int]:
        return self.shapes[self.predecessors(index)[0]]

    def layer_count(self, kind: str | None = None) -> int:
        return sum(1 for l in self.layers if kind is None or l.kind == kind)

    def index_of(self, name: str) -> int:
        for i, l in enumerate(self.layers):
            if l.name == name:
                return i
        raise KeyError(name)

    def macs(self) -> int:
        return sum(l.macs(self.shapes[l.name]) for l in self.layers)

    def to_dict(self) -> dict:
        return {"name": self.name, "input": list(self.input_shape),
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        try:
            return cls(str(d["name"]), tuple(d["input"]),
                       tuple(LayerSpec.from_dict(l) for l in d.get("layers") or ()))
        except KeyError as exc:
            raise TopologyError(f"topology missing required key {exc}") from None


def ops_count(net: Network) -> float:
    """GOPs per image over conv and fc layers, counting a MAC as two ops."""
    return 2 * net.macs() / 1e9


def gop_bits(net_or_gops: Network | float, act_bits: int, weight_bits_effective: int) -> float:
    """Operations weighted by operand width, ``GOPs * (act_bits + weight_bits)``.

    Accepts a network or a GOPs figure directly.
    """
    if act_bits < 1 or weight_bits_effective < 1:
        raise ValueError("bit widths must be >= 1")
    gops = ops_count(net_or_gops) if isinstance(net_or_gops, Network) else float(net_or_gops)
    return gops * (act_bits + weight_bits_effective)


def widen(net: Network, k: int) -> Network:
    """Multiply every hidden conv/fc filter count by ``k``.

    The image channels and the classifier's output count stay fixed; input
    channel counts of downstream layers follow from shape propagation.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"widen factor must be 1, 2 or 3, got {k}")
    if k == 1:
        return net
    compute = [i for i, l in enumerate(net.layers) if l.is_compute]
    classifier = compute[-1] if compute else None
    shapes = {INPUT: net.input_shape}
    new_layers = []
    for i, layer in enumerate(net.layers):
        srcs = net.predecessors(i)
        c, h, w = shapes[srcs[0]]
        if layer.is_compute:
            out = layer.out_channels if i == classifier else layer.out_channels * k
            cin = c * h * w if layer.kind == "fc" else c
            groups = layer.groups
            layer = replace(layer, in_channels=cin, out_channels=out, groups=groups)
        new_layers.append(layer)
        # propagate incrementally so later in_channels see widened shapes
        partial = Network(net.name, net.input_shape, tuple(new_layers))
        shapes = partial.shapes
    suffix = f"-{k}x"
    return Network(net.name + suffix, net.input_shape, tuple(new_layers))


def load_topology(path) -> Network:
    return Network.from_dict(load_yaml(path))


def builtin(name: str) -> Network:
    key = name.strip().lower().replace("-", "")
    if key not in BUILTINS:
        raise TopologyError(f"unknown built-in network {name!r}; choose from {', '.join(BUILTINS)}")
    return Network.from_dict(load_fixture(f"topology_{key}.yaml"))


def resolve_network(spec: str) -> Network:
    """Built-in name or path to a topology file."""
    if spec.strip().lower().replace("-", "") in BUILTINS:
        return builtin(spec)
    return load_topology(spec)
