"""WDN1 binary arrays with JSON sidecars."""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"WDN1"
VERSION = 1


class FormatError(ValueError):
    pass


def write_wdn1(path, values, sidecar: dict | None = None):
    """values has shape (space axes..., time); samples are written with time slowest."""
    a = np.asarray(values)
    if a.ndim < 2:
        raise ValueError("need at least one space axis and a time axis")
    cplx = np.iscomplexobj(a)
    ndim = a.ndim - 1
    body = np.moveaxis(a, -1, 0)
    if cplx:
        body = np.stack([body.real, body.imag], -1)
    body = np.ascontiguousarray(body, dtype="<f8")
    head = MAGIC + struct.pack("<IBB", VERSION, ndim, int(cplx))
    head += struct.pack(f"<{a.ndim}Q", *a.shape)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(body.tobytes())
    if sidecar is not None:
        write_sidecar(path, sidecar)
    return path


def read_wdn1(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("bad magic")
    version, ndim, cplx = struct.unpack_from("<IBB", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    off = 10
    dims = struct.unpack_from(f"<{ndim + 1}Q", data, off)
    off += 8 * (ndim + 1)
    n = int(np.prod(dims)) * (2 if cplx else 1)
    if len(data) - off != 8 * n:
        raise FormatError("payload size does not match the header")
    body = np.frombuffer(data, "<f8", n, off)
    shape = (dims[-1],) + tuple(dims[:-1])
    if cplx:
        body = body.reshape(shape + (2,))
        body = body[..., 0] + 1j * body[..., 1]
    else:
        body = body.reshape(shape).copy()
    return np.moveaxis(body, 0, -1)


def sidecar_path(path):
    return Path(str(path) + ".json")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def write_sidecar(path, meta):
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True, default=_default))


def read_sidecar(path):
    return json.loads(sidecar_path(path).read_text())


def array_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


def coeff_hash(coeffs):
    if coeffs is None:
        return "none"
    if hasattr(coeffs, "A"):
        return array_hash(*[c.values for c in coeffs.A], coeffs.q.values)
    return array_hash(*[c.values for c in coeffs.V], coeffs.p.values)
