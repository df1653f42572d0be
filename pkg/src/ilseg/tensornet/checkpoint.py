"""SNET checkpoint files.

Layout: ``b"SNET"``, little-endian u32 header length N, N bytes of UTF-8 JSON,
then the concatenated little-endian float32 tensors. The header lists every
tensor with its name, shape, byte offset (relative to the payload start) and
byte count, in parameter order followed by optimizer moments when present.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .unet import Network, UNetConfig

SNET_MAGIC = b"SNET"
_F32 = np.dtype("<f4")


def save_checkpoint(path, net: Network, optimizer=None, extra: dict | None = None) -> None:
    tensors = list(net.params.items())
    opt_header = None
    if optimizer is not None:
        opt_header = {
            "lr": optimizer.lr,
            "weight_decay": optimizer.weight_decay,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "exclude_norm_and_bias": optimizer.exclude_norm_and_bias,
            "step_count": optimizer.step_count,
        }
        for name in net.params:
            if name in optimizer.m:
                tensors.append((f"adam.m/{name}", optimizer.m[name]))
                tensors.append((f"adam.v/{name}", optimizer.v[name]))

    entries, chunks, offset = [], [], 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype=_F32).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "format": "snet",
        "version": 1,
        "dtype": "f32",
        "endian": "little",
        "config": net.config.to_dict(),
        "tensors": entries,
        "optimizer": opt_header,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(SNET_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in chunks:
            fh.write(raw)


def load_checkpoint(path, precision: str | None = None):
    """Return ``(network, optimizer_state_or_None, extra)``."""
    from ..optim import AdamWState

    blob = Path(path).read_bytes()
    if blob[:4] != SNET_MAGIC:
        raise DataError(f"{path}: not an SNET checkpoint")
    (n,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + n].decode("utf-8"))
    payload = blob[8 + n :]
    cfg_dict = dict(header["config"])
    if precision is not None:
        cfg_dict["precision"] = precision
    config = UNetConfig.from_dict(cfg_dict)

    arrays = {}
    for e in header["tensors"]:
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if stop > len(payload):
            raise DataError(f"{path}: tensor {e['name']} extends past end of payload")
        arr = np.frombuffer(payload[start:stop], dtype=_F32).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(config.dtype)

    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    net = Network(config, params)
    opt = None
    if header.get("optimizer"):
        o = header["optimizer"]
        opt = AdamWState(
            lr=o["lr"],
            weight_decay=o["weight_decay"],
            beta1=o["beta1"],
            beta2=o["beta2"],
            eps=o["eps"],
            exclude_norm_and_bias=o["exclude_norm_and_bias"],
            step_count=o["step_count"],
        )
        for name in params:
            if f"adam.m/{name}" in arrays:
                opt.m[name] = arrays[f"adam.m/{name}"]
                opt.v[name] = arrays[f"adam.v/{name}"]
    return net, opt, header.get("extra", {})
