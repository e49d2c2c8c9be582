"""Per-tensor Top-z magnitude pruning."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class SparsityConfig:
    """Keep fractions for weight and bias tensors.

    Biases are pruned less aggressively by default; both defaults are tunable
    and not taken from any published run.
    """

    weight_keep_fraction: float = 0.10
    bias_keep_fraction: float = 0.50

    def __post_init__(self):
        for field in ("weight_keep_fraction", "bias_keep_fraction"):
            value = getattr(self, field)
            if not 0 < value <= 1:
                raise ValueError(f"{field} must be in (0, 1], got {value}")

    def fraction_for(self, kind: str) -> float:
        return self.bias_keep_fraction if kind == "bias" else self.weight_keep_fraction


def keep_count(n: int, keep_fraction: float) -> int:
    # rounding guards ceil() against products like 0.7 * 10 = 7.000000000000001
    return min(n, max(1, math.ceil(round(keep_fraction * n, 6))))


def top_z_indices(values: np.ndarray, keep: int) -> np.ndarray:
    """Flat indices of the ``keep`` largest magnitudes, ties to the lower index.

    Expected linear time: one ``np.partition`` to find the threshold magnitude.
    """
    mags = np.abs(values.reshape(-1))
    n = mags.size
    if keep >= n:
        return np.arange(n)
    threshold = np.partition(mags, n - keep)[n - keep]
    above = np.flatnonzero(mags > threshold)
    at = np.flatnonzero(mags == threshold)
    return np.sort(np.concatenate([above, at[: keep - above.size]]))


def top_z(t: Tensor, keep_fraction: float) -> Tensor:
    """Zero all but the ``ceil(keep_fraction * len)`` largest-magnitude elements."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    if t.size == 0:
        raise ValueError(f"tensor {t.name!r} is empty")
    if keep_fraction == 1:
        return t
    flat = t.flat()
    idx = top_z_indices(flat, keep_count(flat.size, keep_fraction))
    out = np.zeros_like(flat)
    out[idx] = flat[idx]
    return t.with_values(out)


def sparsify(tensors: Iterable[Tensor], config: SparsityConfig) -> list[Tensor]:
    return [top_z(t, config.fraction_for(t.kind)) for t in tensors]
