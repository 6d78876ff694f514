"""On-disk formats: LPQT binary tensors and YAML model bundles.

LPQT layout, all fields little-endian::

    offset  size  field
    0       4     magic  b"LPQT"
    4       2     version (u16) = 1
    6       1     dtype tag (u8)
    7       1     flags (u8); bit 0 = sub-byte packed payload
    8       1     rank (u8)
    9       4*r   dims (u32 each)
    ...           payload

dtype tags: 1..8 are unsigned activation codes of that bit width, 0x20 is
signed int32, 0x21 is float32.  Unpacked codes take ``ceil(bits / 8)`` bytes
per element (one byte for every activation width).  In packed mode codes are
laid out LSB first, ``bits`` bits each, back to back, and the last byte is
zero padded.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import yaml

from .bns import BnsRaw
from .engine import IMAGE_FORMAT, LayerParams, ModelBundle
from .netgraph import Network, TopologyError, builtin
from .numerics import ActFormat, QTensor, QuantizedFilterBank, QuantizationError, WeightFormat

MAGIC = b"LPQT"
VERSION = 1
TAG_INT32 = 0x20
TAG_FLOAT32 = 0x21
FLAG_PACKED = 0x01
_HEADER = struct.Struct("<4sHBBB")
BUNDLE_FORMAT = "lpnn-bundle"
BUNDLE_VERSION = 1


class FormatError(ValueError):
    pass


def _pack_bits(codes: np.ndarray, bits: int) -> bytes:
    flat = codes.reshape(-1).astype(np.uint8)
    bitplane = ((flat[:, None] >> np.arange(bits, dtype=np.uint8)) & 1).astype(np.uint8)
    return np.packbits(bitplane.reshape(-1), bitorder="little").tobytes()


def _unpack_bits(payload: bytes, bits: int, count: int) -> np.ndarray:
    raw = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), bitorder="little")
    if raw.size < count * bits:
        raise FormatError("truncated packed payload")
    planes = raw[: count * bits].reshape(count, bits).astype(np.int64)
    return (planes << np.arange(bits, dtype=np.int64)).sum(axis=1)


def encode_tensor(data, packed: bool = False) -> bytes:
    """Serialize a QTensor, an int32 array or a float32 array."""
    if isinstance(data, QTensor):
        arr, tag = data.codes, data.format.bits
    else:
        arr = np.asarray(data)
        if np.issubdtype(arr.dtype, np.floating):
            arr, tag = arr.astype("<f4"), TAG_FLOAT32
        else:
            if arr.size and (arr.min() < -(2 ** 31) or arr.max() >= 2 ** 31):
                raise FormatError("integer tensor does not fit int32")
            arr, tag = arr.astype("<i4"), TAG_INT32
        if packed:
            raise FormatError("sub-byte packing applies to activation codes only")
    if arr.ndim > 255:
        raise FormatError("rank too large")
    head = _HEADER.pack(MAGIC, VERSION, tag, FLAG_PACKED if packed else 0, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    if isinstance(data, QTensor):
        payload = _pack_bits(arr, tag) if packed else arr.astype(np.uint8).tobytes()
    else:
        payload = arr.tobytes()
    return head + dims + payload


def decode_tensor(buf: bytes):
    if len(buf) < _HEADER.size:
        raise FormatError("file too short for an LPQT header")
    magic, version, tag, flags, rank = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported LPQT version {version}")
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    payload = buf[off:]
    if 1 <= tag <= 8:
        if flags & FLAG_PACKED:
            codes = _unpack_bits(payload, tag, count)
        else:
            if len(payload) != count:
                raise FormatError(f"payload has {len(payload)} bytes, expected {count}")
            codes = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
        try:
            return QTensor(codes.reshape(dims), ActFormat(tag))
        except QuantizationError as exc:
            raise FormatError(str(exc)) from None
    if tag in (TAG_INT32, TAG_FLOAT32):
        dt = "<i4" if tag == TAG_INT32 else "<f4"
        if len(payload) != 4 * count:
            raise FormatError(f"payload has {len(payload)} bytes, expected {4 * count}")
        arr = np.frombuffer(payload, dtype=dt).reshape(dims)
        return arr.astype(np.int64) if tag == TAG_INT32 else arr.astype(np.float32)
    raise FormatError(f"unknown dtype tag {tag:#x}")


def write_tensor(path, data, packed: bool = False) -> None:
    Path(path).write_bytes(encode_tensor(data, packed))


def read_tensor(path):
    return decode_tensor(Path(path).read_bytes())


# -- model bundles ----------------------------------------------------------------

def _weight_name(fmt: WeightFormat) -> str:
    return f"int{fmt.bits}" if fmt.kind == "int" else fmt.kind


def _parse_weight(name: str) -> WeightFormat:
    name = str(name).lower()
    if name.startswith("int"):
        return WeightFormat("int", int(name[3:]))
    return WeightFormat(name)


def bundle_to_dict(bundle: ModelBundle) -> dict:
    layers = {}
    for layer in bundle.network.layers:
        entry: dict = {}
        if layer.name in bundle.out_formats:
            entry["out_bits"] = bundle.out_formats[layer.name].bits
        if layer.is_compute:
            p = bundle.params[layer.name]
            entry["weight"] = _weight_name(p.filters.format)
            entry["shape"] = list(p.filters.codes.shape)
            entry["codes"] = p.filters.codes.reshape(-1).tolist()
            entry["alpha"] = p.filters.alpha.tolist()
            entry["bn"] = {k: getattr(p.bn, k).tolist() for k in ("w", "x", "y", "z")}
            if p.acc_bits:
                entry["acc_bits"] = p.acc_bits
        if entry:
            layers[layer.name] = entry
    return {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "input_bits": bundle.input_format.bits,
            "pe_variant": bundle.pe_variant, "network": bundle.network.to_dict(), "layers": layers}


def bundle_from_dict(d: dict) -> ModelBundle:
    if d.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"not a model bundle (format={d.get('format')!r})")
    if d.get("version") != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {d.get('version')!r}")
    try:
        net_spec = d["network"]
        net = builtin(net_spec) if isinstance(net_spec, str) else Network.from_dict(net_spec)
        params, out_formats = {}, {}
        entries = d.get("layers") or {}
        unknown = set(entries) - {l.name for l in net.layers}
        if unknown:
            raise FormatError(f"parameters for unknown layers {sorted(unknown)}")
        for layer in net.layers:
            e = entries.get(layer.name, {})
            if "out_bits" in e:
                out_formats[layer.name] = ActFormat(int(e["out_bits"]))
            if layer.is_compute:
                if "codes" not in e:
                    raise FormatError(f"layer {layer.name!r} has no filter codes")
                wfmt = _parse_weight(e["weight"])
                codes = np.asarray(e["codes"], dtype=np.int64)
                shape = tuple(e["shape"])
                if codes.size != int(np.prod(shape)):
                    raise FormatError(f"{layer.name}: {codes.size} codes for shape {shape}")
                bank = QuantizedFilterBank(codes.reshape(shape), e["alpha"], wfmt)
                bn = e["bn"]
                params[layer.name] = LayerParams(bank, BnsRaw(bn["w"], bn["x"], bn["y"], bn["z"], bank.alpha),
                                                 e.get("acc_bits"))
        return ModelBundle(net, params, out_formats, ActFormat(int(d.get("input_bits", IMAGE_FORMAT.bits))),
                           str(d.get("pe_variant", "auto")))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed bundle: {exc!r}") from None
    except (QuantizationError, TopologyError) as exc:
        raise FormatError(str(exc)) from None


def write_bundle(path, bundle: ModelBundle) -> None:
    text = yaml.safe_dump(bundle_to_dict(bundle), sort_keys=False, default_flow_style=None, width=120)
    Path(path).write_text("# lpnn model bundle\n" + text)


def read_bundle(path) -> ModelBundle:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a mapping")
    return bundle_from_dict(data)
