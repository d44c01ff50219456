"""Named parameter storage, seeded initialisation and the binary checkpoint format."""
from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Iterator

import numpy as np

from ..errors import ParseError, UnsupportedFormatError
from .tensor import Tensor

MAGIC = b"KDDT1"


class ParameterStore:
    """Ordered map name -> trainable :class:`Tensor`, iterated lexicographically."""

    def __init__(self, entries: dict[str, np.ndarray | Tensor] | None = None):
        self._entries: dict[str, Tensor] = {}
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._entries:
            raise KeyError(f"parameter {name!r} already exists")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._entries[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._entries[name]

    def __iter__(self):
        return iter(self.names())

    def zero_grad(self) -> None:
        for t in self._entries.values():
            t.grad = None

    def subset(self, prefix: str) -> "ParameterStore":
        """A store sharing the tensors whose names start with ``prefix``."""
        out = ParameterStore()
        for name, t in self.items():
            if name.startswith(prefix):
                out._entries[name] = t
        return out

    def merge(self, other: "ParameterStore") -> "ParameterStore":
        out = ParameterStore()
        out._entries.update(self._entries)
        for name, t in other.items():
            if name in out._entries:
                raise KeyError(f"parameter {name!r} present in both stores")
            out._entries[name] = t
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._entries) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, t in self._entries.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def astype(self, dtype) -> "ParameterStore":
        """Independent copy with every array cast to ``dtype``."""
        return ParameterStore({n: t.data.astype(dtype) for n, t in self.items()})

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: t.data.copy() for n, t in self.items()})

    def n_values(self) -> int:
        return sum(t.data.size for t in self._entries.values())


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) as float32."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def zeros(shape: tuple[int, ...]) -> np.ndarray:
    return np.zeros(shape, dtype=np.float32)


# checkpoint format ---------------------------------------------------------------

def write_checkpoint(store: ParameterStore | dict[str, np.ndarray], target) -> None:
    """Serialise parameters: magic, then per parameter (sorted by name)
    u32 name length, UTF-8 name, u32 rank, u32 extents, float32 LE data."""
    arrays = store.arrays() if isinstance(store, ParameterStore) else store
    buf = io.BytesIO()
    buf.write(MAGIC)
    for name in sorted(arrays):
        arr = np.array(arrays[name], dtype="<f4", order="C")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    data = buf.getvalue()
    if hasattr(target, "write"):
        target.write(data)
    else:
        tmp = f"{os.fspath(target)}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)


def read_checkpoint(source) -> dict[str, np.ndarray]:
    if hasattr(source, "read"):
        data = source.read()
    else:
        with open(source, "rb") as fh:
            data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise UnsupportedFormatError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ParseError("truncated checkpoint", offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (n,) = struct.unpack("<I", take(4))
        name = take(n).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        out[name] = arr
    return out


def load_into(store: ParameterStore, source: BinaryIO | str | os.PathLike, prefix: str = "") -> None:
    arrays = read_checkpoint(source)
    store.load_arrays({k: v for k, v in arrays.items() if k.startswith(prefix)})
