"""Named parameter storage, EMA shadows, and the NSF1 checkpoint file.

Checkpoint layout::

    b"NSF1" | uint64 manifest length (LE) | manifest JSON (utf-8) | payload

The manifest lists ``{"name", "shape", "dtype", "offset", "nbytes"}`` per
array; offsets are relative to the start of the payload and every array is
stored as raw little-endian floats. Arbitrary JSON metadata rides along under
``"meta"``.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"NSF1"


class ParamStore:
    """Ordered mapping of unique names to trainable tensors."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.shadow: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def subset(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self._params.items() if n.startswith(prefix)]

    def num_parameters(self, prefix: str = "") -> int:
        return int(sum(t.size for n, t in self._params.items() if n.startswith(prefix)))

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        for n, t in self._params.items():
            if n not in state:
                if strict:
                    raise KeyError(f"missing parameter {n!r}")
                continue
            arr = np.asarray(state[n])
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} does not match {t.shape}")
            t.data = arr.astype(self.dtype).copy()

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore(dtype)
        for n, t in self._params.items():
            other.add(n, t.data)
        other.shadow = {n: v.astype(dtype) for n, v in self.shadow.items()}
        return other

    # -- EMA shadow ----------------------------------------------------
    def init_shadow(self) -> None:
        self.shadow = {n: t.data.copy() for n, t in self._params.items()}

    def shadow_state(self) -> dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.shadow.items()}

    def swapped_to_shadow(self) -> "ParamStore":
        """A new store whose live values are this store's EMA shadow."""
        other = ParamStore(self.dtype)
        for n, t in self._params.items():
            other.add(n, self.shadow.get(n, t.data))
        return other


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"version": MAGIC.decode(), "arrays": entries, "meta": meta or {}}).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an NSF1 checkpoint")
    (n,) = struct.unpack("<Q", blob[4:12])
    manifest = json.loads(blob[12:12 + n].decode())
    base = 12 + n
    arrays = {}
    for e in manifest["arrays"]:
        dt = np.dtype(e["dtype"]).newbyteorder("<")
        start = base + e["offset"]
        arr = np.frombuffer(blob, dtype=dt, count=int(np.prod(e["shape"], dtype=np.int64)), offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"])).copy()
    return arrays, manifest.get("meta", {})
