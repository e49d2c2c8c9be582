"""Named float32 tensors and the elementwise arithmetic used to form weight deltas."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

KINDS = ("weight", "bias")


def tensor_name(layer: int, kind: str) -> str:
    return f"layer{layer}.{kind}"


@dataclass(frozen=True, eq=False)
class Tensor:
    """An immutable, shaped array of 32-bit values.

    ``values`` is stored with the tensor's shape and flagged read-only, so a
    Tensor can be shared between concurrently running clients.
    """

    name: str
    shape: tuple[int, ...]
    values: np.ndarray
    kind: str = "weight"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"tensor {self.name!r}: kind must be one of {KINDS}, got {self.kind!r}")
        shape = tuple(int(d) for d in self.shape)
        if any(d < 1 for d in shape):
            raise ValueError(f"tensor {self.name!r}: dimensions must be positive, got {shape}")
        values = np.array(self.values, dtype=np.float32, copy=True)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ValueError(
                f"tensor {self.name!r}: {values.size} values do not fit shape {shape}"
            )
        values = values.reshape(shape)
        if not np.isfinite(values).all():
            raise ValueError(f"tensor {self.name!r} contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, name: str, array, kind: str = "weight") -> "Tensor":
        array = np.asarray(array, dtype=np.float32)
        return cls(name=name, shape=array.shape or (1,), values=array, kind=kind)

    @property
    def size(self) -> int:
        return self.values.size

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def with_values(self, values) -> "Tensor":
        return Tensor(self.name, self.shape, values, self.kind)

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.shape}, kind={self.kind!r})"


def _check_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.name}{list(a.shape)} vs {b.name}{list(b.shape)}")


def subtract(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``a - b`` in float32; metadata is taken from ``a``."""
    _check_shapes(a, b, "subtract")
    return a.with_values(a.values - b.values)


def add_scaled(base: Tensor, delta: Tensor, eta: float) -> Tensor:
    """Return ``base - eta * delta`` computed in float32."""
    _check_shapes(base, delta, "add_scaled")
    return base.with_values(base.values - np.float32(eta) * delta.values)


def count_nonzero(t: Tensor) -> int:
    return int(np.count_nonzero(t.values))


def zeros_like(t: Tensor) -> Tensor:
    return t.with_values(np.zeros(t.shape, dtype=np.float32))


def total_size(tensors: Sequence[Tensor]) -> int:
    return sum(t.size for t in tensors)
