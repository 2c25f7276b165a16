"""Binary checkpoint container.

Layout::

    b"EEML" | u32 version | u32 header length | JSON header | float64 arrays

All integers and floats are little-endian.  The header lists every array's
name and shape in storage order, so a reader can check the byte count before
touching the data.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..cluster import ClusterModel
from ..diffnet import NetSpec, ParamVector
from ..ensemble import Ensemble
from ..errors import CheckpointError, CheckpointVersionError

MAGIC = b"EEML"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_F8 = np.dtype("<f8")


def _net_header(spec: NetSpec):
    return {"layer_sizes": list(spec.layer_sizes), "activation": spec.activation}


def _cluster_header(c: ClusterModel):
    return {"K": c.K, "seed": c.seed, "inertia": c.inertia, "iters_run": c.iters_run}


def _encode(obj):
    if isinstance(obj, ParamVector):
        return "params", {"net": _net_header(obj.spec)}, [("params", obj.values)]
    if isinstance(obj, ClusterModel):
        return "cluster", {"cluster": _cluster_header(obj)}, [("centers", obj.centers)]
    if isinstance(obj, Ensemble):
        header = {
            "net": _net_header(obj.spec),
            "cluster": _cluster_header(obj.cluster),
            "provenance": obj.provenance,
        }
        arrays = [(f"expert_{j}", e.values) for j, e in enumerate(obj.experts)]
        arrays.append(("centers", obj.cluster.centers))
        return "ensemble", header, arrays
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def save_checkpoint(path, obj, meta: dict | None = None) -> str:
    """Write ``obj`` (ParamVector, ClusterModel or Ensemble); returns its sha256."""
    kind, header, arrays = _encode(obj)
    header = dict(header, kind=kind, meta=meta or {},
                  arrays=[{"name": n, "shape": list(np.shape(a))} for n, a in arrays])
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(a, dtype=_F8).tobytes() for _, a in arrays)
    data = _PREFIX.pack(MAGIC, VERSION, len(blob)) + blob + payload
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return hashlib.sha256(data).hexdigest()


def _read(path):
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read: {exc}") from exc
    if len(data) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads version {VERSION}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise CheckpointError(f"{path}: truncated inside header")
    try:
        header = json.loads(data[start:start + hlen].decode())
        specs = [(a["name"], tuple(int(s) for s in a["shape"])) for a in header["arrays"]]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from exc
    pos = start + hlen
    arrays = {}
    for name, shape in specs:
        nbytes = int(np.prod(shape, dtype=np.int64)) * _F8.itemsize
        if pos + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated in array {name!r}")
        arrays[name] = np.frombuffer(data, dtype=_F8, count=nbytes // 8,
                                     offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return header, arrays, hashlib.sha256(data).hexdigest()


def _decode(header, arrays):
    kind = header.get("kind")
    try:
        if kind in ("params", "ensemble"):
            net = header["net"]
            spec = NetSpec(tuple(net["layer_sizes"]), net["activation"])
        if kind in ("cluster", "ensemble"):
            ch = header["cluster"]
            cluster = ClusterModel(arrays["centers"], seed=ch["seed"], inertia=ch["inertia"],
                                   iters_run=ch["iters_run"])
            if cluster.K != ch["K"]:
                raise CheckpointError(f"header says K={ch['K']}, centers hold {cluster.K}")
        if kind == "params":
            return ParamVector(arrays["params"], spec)
        if kind == "cluster":
            return cluster
        if kind == "ensemble":
            experts = [ParamVector(arrays[f"expert_{j}"], spec) for j in range(cluster.K)]
            return Ensemble(tuple(experts), cluster, header.get("provenance", {}))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"checkpoint does not match its header: {exc}") from exc
    raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def load_checkpoint(path, expect: str | None = None):
    """Returns ``(obj, meta, sha256)``; ``expect`` names the required kind."""
    header, arrays, digest = _read(path)
    if expect is not None and header.get("kind") != expect:
        raise CheckpointError(f"{path}: expected a {expect} checkpoint, found {header.get('kind')!r}")
    return _decode(header, arrays), header.get("meta", {}), digest
