"""Checkpoint serialization.

Little-endian binary: magic ``TMAM``, a u32 format version, then
length-prefixed records (u32 key length, key bytes, u32 payload length,
payload). Parameters and optimizer moments store raw float64 arrays with an
ndim/dims header; the config snapshot stores its exact text. Loading rebuilds
the model from the embedded config and overwrites every parameter, so a
round trip reproduces forward outputs bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import RunConfig, parse_config
from .model import ModelParams, build_model
from .optim import AdamState
from .params import named_parameters

MAGIC = b"TMAM"
VERSION = 1


class CheckpointError(Exception):
    """Unreadable or inconsistent checkpoint file."""


@dataclass
class Checkpoint:
    config: RunConfig
    model: ModelParams
    adam: AdamState
    stage1_steps: int
    stage2_steps: int

    @property
    def fusion_trained(self) -> bool:
        return self.stage2_steps > 0


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype=np.float64)   # tobytes() serializes C-order
    head = struct.pack("<B", arr.ndim) \
        + b"".join(struct.pack("<I", d) for d in arr.shape)
    return head + arr.tobytes()


def _decode_array(payload: bytes) -> np.ndarray:
    if len(payload) < 1:
        raise CheckpointError("empty array payload")
    ndim = payload[0]
    dims = struct.unpack_from("<%dI" % ndim, payload, 1)
    data = np.frombuffer(payload, dtype="<f8", offset=1 + 4 * ndim)
    expected = int(np.prod(dims)) if dims else 1
    if data.size != expected:
        raise CheckpointError("array payload size mismatch")
    return data.reshape(dims).copy()


def _records(model: ModelParams, adam: AdamState, cfg: RunConfig,
             stage1_steps: int, stage2_steps: int):
    yield "config", cfg.to_text().encode("utf-8")
    yield "counters", struct.pack("<QQQ", stage1_steps, stage2_steps,
                                  adam.step_count)
    for name, tensor in named_parameters(model):
        yield "param/" + name, _encode_array(tensor.data)
    for name in sorted(adam.m):
        yield "adam_m/" + name, _encode_array(adam.m[name])
        yield "adam_v/" + name, _encode_array(adam.v[name])


def save_checkpoint(path: str, cfg: RunConfig, model: ModelParams,
                    adam: AdamState, stage1_steps: int,
                    stage2_steps: int) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for key, payload in _records(model, adam, cfg, stage1_steps,
                                     stage2_steps):
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)))
            fh.write(kb)
            fh.write(struct.pack("<I", len(payload)))
            fh.write(payload)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    pos = 8
    records: dict[str, bytes] = {}
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise CheckpointError("truncated record at byte %d" % pos)
        (klen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        key = blob[pos:pos + klen].decode("utf-8")
        pos += klen
        if pos + 4 > len(blob):
            raise CheckpointError("truncated record %r" % key)
        (plen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        payload = blob[pos:pos + plen]
        if len(payload) != plen:
            raise CheckpointError("truncated payload for %r" % key)
        pos += plen
        records[key] = payload

    if "config" not in records or "counters" not in records:
        raise CheckpointError("checkpoint missing config/counters records")
    cfg = parse_config(records["config"].decode("utf-8"))
    stage1_steps, stage2_steps, adam_steps = \
        struct.unpack("<QQQ", records["counters"])

    model = build_model(cfg)
    for name, tensor in named_parameters(model):
        key = "param/" + name
        if key not in records:
            raise CheckpointError("checkpoint missing parameter %r" % name)
        arr = _decode_array(records[key])
        if arr.shape != tensor.data.shape:
            raise CheckpointError("shape mismatch for %r: %r vs %r"
                                  % (name, arr.shape, tensor.data.shape))
        tensor.data = arr

    adam = AdamState(step_count=adam_steps)
    for key, payload in records.items():
        if key.startswith("adam_m/"):
            adam.m[key[len("adam_m/"):]] = _decode_array(payload)
        elif key.startswith("adam_v/"):
            adam.v[key[len("adam_v/"):]] = _decode_array(payload)
    return Checkpoint(cfg, model, adam, stage1_steps, stage2_steps)
