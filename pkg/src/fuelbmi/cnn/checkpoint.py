"""Binary checkpoint container.

Layout::

    b"FBMICNN\\n"                magic
    uint32 LE                    format version
    uint32 LE                    header length in bytes
    header                       UTF-8 JSON (sorted keys): architecture,
                                 hyperparameters, class table, array index
    float64 LE values            every array of the index, C order, back to back
"""

from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..core import ApplianceClass, BMIError
from .network import PARAM_ORDER, Architecture, Hyperparameters, NetworkModel, OptimizerState

MAGIC = b"FBMICNN\n"
FORMAT_VERSION = 1


class CheckpointError(BMIError):
    pass


def _arrays(model: NetworkModel):
    st = model.opt
    yield "scalars", np.array([st.beta1_prod, st.beta2_prod, model.scale_w], dtype=float)
    for name in PARAM_ORDER:
        yield f"param/{name}", model.params[name]
    for name in PARAM_ORDER:
        yield f"m/{name}", st.m[name]
    for name in PARAM_ORDER:
        yield f"v/{name}", st.v[name]


def dumps(model: NetworkModel) -> bytes:
    arrays = list(_arrays(model))
    header = model.config_dict()
    header["optimizer"] = {"step": model.opt.step, "samples_seen": model.opt.samples_seen}
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(hbytes)))
    buf.write(hbytes)
    for _, a in arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> NetworkModel:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    off += 8
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if off + nbytes > len(data):
            raise CheckpointError("truncated checkpoint")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=off) \
            .astype(float).reshape(shape)
        off += nbytes
    if off != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    arch = header["architecture"]
    arch["hidden"] = tuple(arch["hidden"])
    beta1_prod, beta2_prod, scale_w = arrays["scalars"].tolist()
    opt = OptimizerState(
        m={k: arrays[f"m/{k}"] for k in PARAM_ORDER},
        v={k: arrays[f"v/{k}"] for k in PARAM_ORDER},
        step=header["optimizer"]["step"],
        samples_seen=header["optimizer"]["samples_seen"],
        beta1_prod=beta1_prod,
        beta2_prod=beta2_prod,
    )
    return NetworkModel(
        params={k: arrays[f"param/{k}"] for k in PARAM_ORDER},
        classes=[ApplianceClass.decode(c) for c in header["classes"]],
        arch=Architecture(**arch),
        hp=Hyperparameters(**header["hyperparameters"]),
        scale_w=scale_w,
        opt=opt,
    )


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: NetworkModel, path) -> None:
    atomic_write_bytes(path, dumps(model))


def load(path) -> NetworkModel:
    return loads(Path(path).read_bytes())
