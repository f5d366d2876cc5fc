"""Named parameter storage and the binary checkpoint format.

Checkpoint layout (all integers little-endian):
  magic "MOSCKPT1" | u64 rng_seed | u32 n_params |
  per parameter: u32 name_len, name utf-8, u32 ndim, ndim * u32 dims |
  per parameter (same order): raw float64 little-endian buffer, row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"MOSCKPT1"


class CheckpointFormatError(ValueError):
    """Checkpoint bytes do not follow the MOSCKPT1 layout."""


class ParameterStore:
    """Ordered, unique mapping from parameter path to trainable Tensor."""

    def __init__(self, rng_seed: int = 0):
        self.rng_seed = int(rng_seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.size for p in self._params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of every parameter buffer (used for best-epoch restore)."""
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, data in snap.items():
            self._params[name].data = data.copy()

    # -- serialization ------------------------------------------------------

    def save(self, path) -> None:
        chunks = [MAGIC, struct.pack("<Q", self.rng_seed), struct.pack("<I", len(self._params))]
        for name, p in self._params.items():
            raw = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
            chunks.append(struct.pack("<I", p.ndim))
            chunks.append(struct.pack(f"<{p.ndim}I", *p.shape))
        for p in self._params.values():
            chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "ParameterStore":
        blob = Path(path).read_bytes()
        if blob[: len(MAGIC)] != MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic, not a MOSCKPT1 checkpoint")
        off = len(MAGIC)

        def unpack(fmt):
            nonlocal off
            size = struct.calcsize(fmt)
            if off + size > len(blob):
                raise CheckpointFormatError(f"{path}: truncated checkpoint")
            vals = struct.unpack_from(fmt, blob, off)
            off += size
            return vals

        (seed,) = unpack("<Q")
        (count,) = unpack("<I")
        store = cls(rng_seed=seed)
        shapes: list[tuple[str, tuple]] = []
        for _ in range(count):
            (name_len,) = unpack("<I")
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (ndim,) = unpack("<I")
            dims = unpack(f"<{ndim}I") if ndim else ()
            shapes.append((name, tuple(dims)))
        for name, dims in shapes:
            n = int(np.prod(dims, dtype=np.int64)) if dims else 1
            size = 8 * n
            if off + size > len(blob):
                raise CheckpointFormatError(f"{path}: truncated parameter data for {name}")
            data = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(dims)
            off += size
            store.add(name, Tensor(data.astype(np.float64)))
        if off != len(blob):
            raise CheckpointFormatError(f"{path}: {len(blob) - off} trailing bytes")
        return store
