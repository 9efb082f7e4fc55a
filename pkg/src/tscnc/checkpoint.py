"""Checkpoint persistence for masked networks and optimizer state.

Layout: 4-byte magic, u32 format version, u32 header length, JSON header,
u32 CRC32 of the header, then one blob per parameterized layer (weights and
bias as little-endian float64, the mask as a bitmap packed
least-significant-bit first), optional momentum blobs, and a final u32
CRC32 over all payload bytes.  A reloaded network reproduces forward
outputs bitwise.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .network import MaskedLayer, Network

MAGIC = b"TSCN"
VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    net: Network
    state: dict


def _weight_bytes(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def _mask_bytes(mask) -> bytes:
    bits = np.ascontiguousarray(mask.ravel(), dtype=np.uint8)
    return np.packbits(bits, bitorder="little").tobytes()


def _layer_descriptor(layer: MaskedLayer) -> dict:
    d = {"kind": layer.kind, "prunable": layer.prunable}
    if layer.parameterized:
        d["w_shape"] = list(layer.W.shape)
        d["b_len"] = int(layer.b.size)
    if layer.kind == "conv2d":
        d.update(
            kernel_size=layer.kernel_size, stride=layer.stride, pad=layer.pad,
            in_channels=layer.in_channels, out_channels=layer.out_channels,
        )
    return d


def save_checkpoint(path, net: Network, state: dict | None = None) -> None:
    """Write the network and optional trainer state to one binary file.

    state may carry "epoch", "architecture", "config", and "momentum" (a
    dict of per-layer {"W": array, "b": array} velocity tensors).
    """
    state = state or {}
    momentum = state.get("momentum")
    header = {
        "format": "tscnc-checkpoint",
        "architecture": state.get("architecture"),
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "epoch": state.get("epoch"),
        "config": state.get("config"),
        "layers": [_layer_descriptor(l) for l in net.layers],
        "momentum": momentum is not None,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = bytearray()
    for li, layer in enumerate(net.layers):
        if not layer.parameterized:
            continue
        payload += _weight_bytes(layer.W)
        payload += _weight_bytes(layer.b)
        payload += _mask_bytes(layer.Z)
        if momentum is not None:
            payload += _weight_bytes(momentum[li]["W"])
            payload += _weight_bytes(momentum[li]["b"])
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(hbytes)))
        f.write(hbytes)
        f.write(struct.pack("<I", zlib.crc32(hbytes)))
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(bytes(payload))))


def _take(buf, offset, count, path):
    if offset + count > len(buf):
        raise FormatError(f"{path}: truncated payload", offset=offset)
    return buf[offset : offset + count], offset + count


def load_checkpoint(path) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint; validates both CRCs."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file", offset=0)
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise FormatError(
            f"{path}: unsupported checkpoint version {version}", offset=4
        )
    hlen = struct.unpack("<I", raw[8:12])[0]
    hbytes, off = _take(raw, 12, hlen, path)
    crc_bytes, off = _take(raw, off, 4, path)
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(hbytes):
        raise FormatError(f"{path}: header checksum mismatch", offset=12)
    header = json.loads(hbytes.decode("utf-8"))
    payload = raw[off:-4]
    if len(raw) < off + 4:
        raise FormatError(f"{path}: truncated payload", offset=off)
    if struct.unpack("<I", raw[-4:])[0] != zlib.crc32(payload):
        raise FormatError(f"{path}: payload checksum mismatch", offset=off)

    layers = []
    momentum = {} if header["momentum"] else None
    pos = 0
    for li, desc in enumerate(header["layers"]):
        kind = desc["kind"]
        if kind not in ("linear", "conv2d"):
            layers.append(MaskedLayer(kind=kind))
            continue
        shape = tuple(desc["w_shape"])
        wn = int(np.prod(shape))
        blob, pos = _take(payload, pos, wn * 8, path)
        W = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
        blob, pos = _take(payload, pos, desc["b_len"] * 8, path)
        b = np.frombuffer(blob, dtype="<f8").copy()
        nbytes = (wn + 7) // 8
        blob, pos = _take(payload, pos, nbytes, path)
        bits = np.unpackbits(
            np.frombuffer(blob, dtype=np.uint8), bitorder="little"
        )[:wn]
        Z = bits.astype(np.float64).reshape(shape)
        layer = MaskedLayer(
            kind=kind, W=W, Z=Z, b=b, prunable=desc["prunable"],
        )
        if kind == "conv2d":
            layer.kernel_size = desc["kernel_size"]
            layer.stride = desc["stride"]
            layer.pad = desc["pad"]
            layer.in_channels = desc["in_channels"]
            layer.out_channels = desc["out_channels"]
        layers.append(layer)
        if momentum is not None:
            blob, pos = _take(payload, pos, wn * 8, path)
            vW = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
            blob, pos = _take(payload, pos, desc["b_len"] * 8, path)
            vb = np.frombuffer(blob, dtype="<f8").copy()
            momentum[li] = {"W": vW, "b": vb}
    if pos != len(payload):
        raise FormatError(
            f"{path}: {len(payload) - pos} unexpected trailing bytes",
            offset=off + pos,
        )
    net = Network(
        layers=layers,
        input_shape=tuple(header["input_shape"]),
        class_count=header["class_count"],
    )
    state = {
        key: header.get(key)
        for key in ("epoch", "architecture", "config")
        if header.get(key) is not None
    }
    if momentum is not None:
        state["momentum"] = momentum
    return Checkpoint(header=header, net=net, state=state)
