"""ELS1 parameter files: 16-byte header, then every parameter as little-endian f32."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, CountMismatch, TruncatedRecord, UnsupportedVersion
from .model import LstmHyper, LstmParams, param_count, param_shapes

ELS1_MAGIC = b"ELS1"
ELS1_VERSION = 1
ELS1_HEADER = struct.Struct("<4sIII")  # magic, version, param_count, reserved


def serialize_params(params: LstmParams) -> bytes:
    payload = np.concatenate([params[name].astype("<f4").ravel() for name, _ in param_shapes(params.hyper)])
    return ELS1_HEADER.pack(ELS1_MAGIC, ELS1_VERSION, payload.size, 0) + payload.tobytes()


def deserialize_params(data: bytes, hyper: LstmHyper | None = None) -> LstmParams:
    """Inverse of :func:`serialize_params`; arrays come back as float32."""
    hyper = hyper or LstmHyper()
    if len(data) < ELS1_HEADER.size:
        raise TruncatedRecord("ELS1 header truncated")
    magic, version, count, _ = ELS1_HEADER.unpack_from(data)
    if magic != ELS1_MAGIC:
        raise BadMagic(f"expected {ELS1_MAGIC!r}, got {magic!r}")
    if version != ELS1_VERSION:
        raise UnsupportedVersion(f"ELS1 version {version}")
    expected = param_count(hyper)
    body = data[ELS1_HEADER.size:]
    if count != expected or len(body) != 4 * expected:
        raise CountMismatch(
            f"architecture needs {expected} parameters; header says {count}, payload holds {len(body) / 4:g}"
        )
    flat = np.frombuffer(body, dtype="<f4")
    arrays, pos = {}, 0
    for name, shape in param_shapes(hyper):
        n = int(np.prod(shape))
        arrays[name] = flat[pos:pos + n].reshape(shape).astype(np.float32)
        pos += n
    return LstmParams(hyper.replace(dtype="float32"), arrays)


def save_model(path, params: LstmParams) -> None:
    """Write ``path`` (ELS1) plus a ``.json`` sidecar holding the hyperparameters."""
    path = Path(path)
    path.write_bytes(serialize_params(params))
    Path(str(path) + ".json").write_text(json.dumps(params.hyper.to_dict(), indent=2), encoding="utf-8")


def load_model(path, hyper: LstmHyper | None = None) -> LstmParams:
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    if hyper is None and sidecar.exists():
        hyper = LstmHyper(**json.loads(sidecar.read_text(encoding="utf-8")))
    return deserialize_params(path.read_bytes(), hyper)
