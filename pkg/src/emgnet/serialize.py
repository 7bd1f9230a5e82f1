"""Versioned binary model files.

Layout, all integers little-endian::

    magic      8 bytes   b"EMGNETNN" (network) or b"EMGNETSV" (svm)
    version    uint32
    header_len uint32
    header     UTF-8 JSON (canonical: sorted keys, no whitespace)
    count      uint64
    payload    count float64 values, little-endian

For networks the header is the layer-stack description and the payload is
every parameter array followed by its running statistics, layer by layer.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .layers import Network, NetworkSpec
from .svm import OvaModel

NETWORK_MAGIC = b"EMGNETNN"
SVM_MAGIC = b"EMGNETSV"
VERSION = 1
_F64 = np.dtype("<f8")


def _write(fh, magic, header: str, arrays):
    payload = np.concatenate([np.ravel(a).astype(_F64) for a in arrays]) if arrays else np.empty(0, _F64)
    text = header.encode("utf-8")
    fh.write(magic)
    fh.write(struct.pack("<II", VERSION, len(text)))
    fh.write(text)
    fh.write(struct.pack("<Q", payload.size))
    fh.write(payload.tobytes())


def _read(fh, magic):
    got = fh.read(8)
    if got != magic:
        raise DataError(f"bad magic {got!r}; expected {magic!r}")
    version, length = struct.unpack("<II", fh.read(8))
    if version != VERSION:
        raise DataError(f"unsupported model file version {version}")
    header = fh.read(length).decode("utf-8")
    (count,) = struct.unpack("<Q", fh.read(8))
    payload = np.frombuffer(fh.read(8 * count), dtype=_F64)
    if payload.size != count:
        raise DataError("model file truncated")
    return header, payload.astype(float)


def _unpack(payload, arrays):
    pos = 0
    for a in arrays:
        a[...] = payload[pos:pos + a.size].reshape(a.shape)
        pos += a.size
    if pos != payload.size:
        raise DataError(f"payload holds {payload.size} values, model needs {pos}")


def network_to_bytes(network: Network) -> bytes:
    buf = io.BytesIO()
    _write(buf, NETWORK_MAGIC, network.spec.to_text(), network.state_arrays())
    return buf.getvalue()


def network_from_bytes(data: bytes) -> Network:
    header, payload = _read(io.BytesIO(data), NETWORK_MAGIC)
    network = Network.build(NetworkSpec.from_text(header))
    _unpack(payload, network.state_arrays())
    return network


def svm_to_bytes(model: OvaModel) -> bytes:
    header = json.dumps(
        {
            "classes": [int(c) for c in model.classes],
            "n_features": int(model.n_features),
            "n_support": int(len(model.support_vectors)),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    arrays = [
        np.array([model.gamma]),
        model.mean,
        model.scale,
        model.support_vectors,
        model.dual_coef,
        model.intercepts,
        model.bounds_scale if model.bounds_scale is not None else np.ones(len(model.classes)),
    ]
    buf = io.BytesIO()
    _write(buf, SVM_MAGIC, header, arrays)
    return buf.getvalue()


def svm_from_bytes(data: bytes) -> OvaModel:
    header, payload = _read(io.BytesIO(data), SVM_MAGIC)
    meta = json.loads(header)
    d, n_sv, g = meta["n_features"], meta["n_support"], len(meta["classes"])
    arrays = [np.zeros(1), np.zeros(d), np.zeros(d), np.zeros((n_sv, d)), np.zeros((n_sv, g)), np.zeros(g), np.zeros(g)]
    _unpack(payload, arrays)
    return OvaModel(
        classes=np.array(meta["classes"]),
        support_vectors=arrays[3],
        dual_coef=arrays[4],
        intercepts=arrays[5],
        gamma=float(arrays[0][0]),
        mean=arrays[1],
        scale=arrays[2],
        bounds_scale=arrays[6],
    )


def save_model(model, path) -> Path:
    path = Path(path)
    data = network_to_bytes(model) if isinstance(model, Network) else svm_to_bytes(model)
    path.write_bytes(data)
    return path


def load_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if data[:8] == NETWORK_MAGIC:
        return network_from_bytes(data)
    if data[:8] == SVM_MAGIC:
        return svm_from_bytes(data)
    raise DataError(f"{path} is not an emgnet model file")
