"""Named parameter storage and the binary checkpoint format."""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

import numpy as np

MAGIC = b"DPNN"
VERSION = 1


@dataclass
class Parameter:
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray = field(init=False)
    sq_avg: np.ndarray = field(init=False)
    velocity: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.sq_avg = np.zeros_like(self.value)
        self.velocity = np.zeros_like(self.value)


class ParameterStore:
    """Ordered name -> Parameter mapping.

    Non-trainable entries hold buffers (running statistics, input scaling)
    that must travel with a checkpoint but are never updated by the optimizer.
    """

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        self._params[name] = Parameter(value, trainable)
        return self._params[name].value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __setitem__(self, name: str, value) -> None:
        p = self._params[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != p.value.shape:
            raise ValueError(f"{name}: shape {value.shape} != {p.value.shape}")
        p.value = value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def param(self, name: str) -> Parameter:
        return self._params[name]

    def trainable(self) -> list[str]:
        return [k for k, p in self._params.items() if p.trainable]

    def grad(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.value)

    def accumulate(self, name: str, g) -> None:
        p = self._params[name]
        if g.shape != p.value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.value.shape}")
        p.grad = p.grad + g

    def size(self, trainable_only: bool = True) -> int:
        return sum(p.value.size for p in self._params.values() if p.trainable or not trainable_only)

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self._params.items()}


def save_checkpoint(store: ParameterStore, out: BinaryIO) -> None:
    """DPNN format: magic, u16 version, u32 manifest length, JSON manifest,
    then every array as row-major little-endian float64 in manifest order."""
    manifest = {
        "params": [
            {"name": k, "shape": list(store[k].shape), "trainable": store.param(k).trainable} for k in store
        ]
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    out.write(MAGIC)
    out.write(struct.pack("<HI", VERSION, len(blob)))
    out.write(blob)
    for k in store:
        out.write(np.ascontiguousarray(store[k], dtype="<f8").tobytes())


def load_checkpoint(inp: BinaryIO | bytes, into: ParameterStore | None = None) -> ParameterStore:
    """Read a checkpoint; with ``into`` the values are copied into an existing
    store after verifying every name and shape."""
    if isinstance(inp, (bytes, bytearray)):
        inp = io.BytesIO(inp)
    if inp.read(4) != MAGIC:
        raise ValueError("not a DPNN checkpoint")
    version, n = struct.unpack("<HI", inp.read(6))
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    manifest = json.loads(inp.read(n).decode("utf-8"))
    loaded = ParameterStore()
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 8
        buf = inp.read(size)
        if len(buf) != size:
            raise ValueError(f"truncated checkpoint at {entry['name']}")
        loaded.add(entry["name"], np.frombuffer(buf, dtype="<f8").reshape(shape).copy(), entry["trainable"])
    if into is None:
        return loaded
    if list(loaded) != list(into):
        raise ValueError("checkpoint parameter names do not match the model")
    for k in loaded:
        if loaded[k].shape != into[k].shape:
            raise ValueError(f"checkpoint shape for {k} is {loaded[k].shape}, model has {into[k].shape}")
        into[k] = loaded[k]
    return into
