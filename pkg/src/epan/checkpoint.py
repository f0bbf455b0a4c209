"""Versioned binary checkpoint container.

Layout (little endian)::

    magic   b"EPANCKPT"
    u32     format version
    u32     header length, then UTF-8 JSON header (sorted keys)
    u32     tensor count
    per tensor:
        u16 name length, name (UTF-8)
        u8  dtype code (0 = float32, 1 = float64)
        u8  ndim, then ndim x u32 extents
        raw data, C order
    u32     CRC-32 of everything above

The JSON header holds the model config, the epoch and any extra metadata.
Identical parameters and metadata always serialise to identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import CheckpointError
from .model import ModelConfig, Network
from .tensor import AdamState, Tensor

MAGIC = b"EPANCKPT"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


@dataclass
class Checkpoint:
    network: Network
    config: ModelConfig
    epoch: int
    meta: dict = field(default_factory=dict)
    optimizer_states: dict[str, AdamState] | None = None


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor {name}")
    raw_name = name.encode()
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.astype(_DTYPES[code], copy=False).tobytes()


def save_checkpoint(path: str | Path, network: Network, epoch: int, *, meta: dict | None = None,
                    optimizer_states=None) -> None:
    """Serialise parameters (and optionally Adam moments) to ``path``."""
    header = {
        "model_config": network.config.to_dict(),
        "epoch": int(epoch),
        "meta": meta or {},
    }
    tensors = [(name, p.data) for name, p in network.named_parameters()]
    if optimizer_states is not None:
        steps = {}
        for (name, _), st in zip(network.named_parameters(), optimizer_states):
            tensors.append(("adam.m." + name, st.first_moment))
            tensors.append(("adam.v." + name, st.second_moment))
            steps[name] = st.step_count
        header["adam_steps"] = steps
    raw_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray(MAGIC)
    body += struct.pack("<II", FORMAT_VERSION, len(raw_header)) + raw_header
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(bytes(body))


class _Reader:
    def __init__(self, buf: bytes, path: Path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint {self.path} is truncated or corrupt")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(buf) < len(MAGIC) + 16 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic or truncated)")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError(f"checkpoint {path} is truncated or corrupt (checksum mismatch)")
    r = _Reader(buf[:-4], path)
    r.take(len(MAGIC))
    version, header_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(r.take(header_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint {path} has a corrupt header") from exc
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CheckpointError(f"checkpoint {path}: unknown dtype code {code} for {name}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(r.buf):
        raise CheckpointError(f"checkpoint {path} has trailing bytes")

    config = ModelConfig.from_dict(header["model_config"])
    shell = Network(config, {})
    params = {}
    for spec in shell.all_specs():
        for suffix in (".weight", ".bias"):
            name = spec.name + suffix
            if name not in arrays:
                raise CheckpointError(f"checkpoint {path} is missing parameter {name}")
            params[name] = Tensor(arrays[name], requires_grad=True, name=name)
    network = Network(config, params)
    states = None
    if "adam_steps" in header:
        states = {}
        for name, p in params.items():
            st = AdamState(p.data)
            st.first_moment = arrays["adam.m." + name]
            st.second_moment = arrays["adam.v." + name]
            st.step_count = int(header["adam_steps"][name])
            states[name] = st
    return Checkpoint(network, config, int(header["epoch"]), header.get("meta", {}), states)
