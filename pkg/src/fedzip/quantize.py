"""Per-tensor 1-D k-means quantization and silhouette-based choice of k.

Lloyd iterations run on the sorted values: in one dimension every cluster is
a contiguous run bounded by centroid midpoints, so each iteration costs
``k`` binary searches plus prefix-sum lookups instead of a pass over the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from ._backend import kernels
from .tensor import Tensor

DEFAULT_K = 3
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_SAMPLE_CAP = 2000
DEFAULT_DP_SAMPLE = 2000


def frequency_order(counts) -> np.ndarray:
    """Labels by descending count, ties to the lower label."""
    counts = np.asarray(counts)
    return np.lexsort((np.arange(counts.size), -counts)).astype(np.int64)


def label_dtype(k: int):
    return np.uint8 if k <= 0xFF else np.uint16 if k <= 0xFFFF else np.uint32


@dataclass(eq=False)
class QuantizedTensor:
    name: str
    shape: tuple[int, ...]
    kind: str
    labels: np.ndarray
    centroids: np.ndarray
    frequency_order: np.ndarray = field(default=None)

    def __post_init__(self):
        self.shape = tuple(int(d) for d in self.shape)
        self.centroids = np.asarray(self.centroids, dtype=np.float32).reshape(-1)
        k = self.centroids.size
        if k < 1:
            raise ValueError(f"{self.name}: need at least one centroid")
        labels = np.asarray(self.labels).reshape(-1)
        if labels.size != int(np.prod(self.shape, dtype=np.int64)):
            raise ValueError(f"{self.name}: {labels.size} labels for shape {self.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"{self.name}: labels out of range for k={k}")
        self.labels = labels.astype(label_dtype(k), copy=False)
        if self.frequency_order is None:
            self.frequency_order = frequency_order(self.counts())
        else:
            self.frequency_order = np.asarray(self.frequency_order, dtype=np.int64)

    @property
    def k(self) -> int:
        return self.centroids.size

    @property
    def size(self) -> int:
        return self.labels.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k).astype(np.int64)

    def __eq__(self, other):
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.kind == other.kind
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.centroids.view(np.uint32), other.centroids.view(np.uint32))
            and np.array_equal(self.frequency_order, other.frequency_order)
        )


def _init_centroids(sorted_vals: np.ndarray, distinct: np.ndarray, k: int) -> np.ndarray:
    # percentiles 10..90 (10/50/90 for k=3); if they collide, spread over distinct values
    init = np.percentile(sorted_vals, np.linspace(10, 90, k))
    if np.unique(init).size == k:
        return init
    u = distinct.size
    init = distinct[np.round(np.linspace(0.1, 0.9, k) * (u - 1)).astype(np.int64)]
    if np.unique(init).size == k:
        return init
    return distinct[np.round(np.linspace(0, u - 1, k)).astype(np.int64)]


def _segments(sorted_vals: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Run boundaries of each cluster in ``sorted_vals``, one row per centroid set.

    ``centroids`` has shape ``(R, k)``, sorted along each row; midpoint ties
    go to the lower centroid.
    """
    mids = (centroids[:, :-1] + centroids[:, 1:]) / 2
    inner = np.searchsorted(sorted_vals, mids.ravel(), side="right").reshape(mids.shape)
    R = centroids.shape[0]
    return np.hstack([np.zeros((R, 1), np.int64), inner, np.full((R, 1), sorted_vals.size)])


def _distortion(prefix, prefix_sq, bounds, centroids) -> np.ndarray:
    lo, hi = bounds[:, :-1], bounds[:, 1:]
    s = prefix[hi] - prefix[lo]
    sq = prefix_sq[hi] - prefix_sq[lo]
    total = np.sum(sq - 2 * centroids * s + (hi - lo) * centroids * centroids, axis=1)
    return np.maximum(total, 0.0)


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    iterations: int
    distortion_history: list


def _optimal_start(sorted_vals: np.ndarray, k: int) -> np.ndarray:
    """Centroids of the globally optimal k-segmentation of an evenly strided sample."""
    n = sorted_vals.size
    if n > DEFAULT_DP_SAMPLE:
        sorted_vals = sorted_vals[np.round(np.linspace(0, n - 1, DEFAULT_DP_SAMPLE)).astype(np.int64)]
    # centring keeps the prefix-sum cost formula well conditioned
    centred = sorted_vals - sorted_vals.mean()
    prefix = np.concatenate([[0.0], np.cumsum(centred)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(centred * centred)])
    bounds = kernels.kmeans_dp_bounds(prefix, prefix_sq, k)
    return np.array([sorted_vals[lo:hi].mean() for lo, hi in zip(bounds[:-1], bounds[1:])])


def kmeans_1d_full(
    values,
    k: int = DEFAULT_K,
    seed: Optional[int] = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> KMeansResult:
    """Lloyd's algorithm on a 1-D sample, with the per-iteration distortion trace.

    Two starts run side by side: fixed percentiles, and the exact optimum of
    a sample of at most ``DEFAULT_DP_SAMPLE`` sorted values. The lower final
    distortion wins, ties to the percentile start. For inputs no larger than
    the sample the result is the global optimum. Both starts are
    deterministic; ``seed`` is accepted for interface symmetry. If the data
    has at most ``k`` distinct values those values are returned as the
    centroids.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("cannot cluster an empty sequence")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sorted_vals = np.sort(values)
    distinct = np.unique(sorted_vals)
    if distinct.size <= k:
        centroids = distinct
        return KMeansResult(centroids, nearest_labels(values, centroids), 0, [0.0])

    prefix = np.concatenate([[0.0], np.cumsum(sorted_vals)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(sorted_vals * sorted_vals)])
    starts = [np.sort(_init_centroids(sorted_vals, distinct, k))]
    optimal = _optimal_start(sorted_vals, k)
    if np.unique(optimal).size == k:
        starts.append(optimal)
    centroids = np.array(starts)
    active = np.ones(len(starts), dtype=bool)
    iterations = np.zeros(len(starts), dtype=np.int64)
    history = []
    for _ in range(max_iter):
        bounds = _segments(sorted_vals, centroids)
        history.append(_distortion(prefix, prefix_sq, bounds, centroids))
        sizes = np.diff(bounds, axis=1)
        sums = prefix[bounds[:, 1:]] - prefix[bounds[:, :-1]]
        # an emptied cluster keeps its previous centroid
        updated = np.sort(np.where(sizes > 0, sums / np.maximum(sizes, 1), centroids), axis=1)
        shift = np.max(np.abs(updated - centroids), axis=1)
        centroids = np.where(active[:, None], updated, centroids)
        iterations += active
        active &= shift >= tol
        if not active.any():
            break
    final = _distortion(prefix, prefix_sq, _segments(sorted_vals, centroids), centroids)
    best = int(np.argmin(final))
    if final[0] <= final[best] * (1 + 1e-12):
        best = 0
    trace = [float(h[best]) for h in history[: iterations[best]]] + [float(final[best])]
    chosen = centroids[best]
    return KMeansResult(chosen, nearest_labels(values, chosen), int(iterations[best]), trace)


def kmeans_1d(values, k: int = DEFAULT_K, seed: Optional[int] = None,
              max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL):
    """Return ``(centroids, labels)`` with centroids sorted ascending."""
    result = kmeans_1d_full(values, k, seed, max_iter, tol)
    return result.centroids, result.labels


def nearest_labels(values, centroids) -> np.ndarray:
    """Index of the nearest centroid per value (ties to the lower index).

    ``centroids`` must be sorted ascending. Distances are compared exactly in
    float64 rather than via rounded midpoints.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    centroids = np.asarray(centroids, dtype=np.float64)
    k = centroids.size
    if k == 1:
        return np.zeros(values.size, dtype=np.int64)
    hi = np.clip(np.searchsorted(centroids, values, side="left"), 1, k - 1)
    lo = hi - 1
    take_lo = np.abs(values - centroids[lo]) <= np.abs(values - centroids[hi])
    labels = np.where(take_lo, lo, hi)
    # equal adjacent centroids (possible after float32 rounding): prefer the lowest
    if np.any(centroids[1:] == centroids[:-1]):
        first = np.searchsorted(centroids, centroids, side="left")
        labels = first[labels]
    return labels


def distortion(values, centroids, labels) -> float:
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    return float(np.sum((values - np.asarray(centroids, dtype=np.float64)[labels]) ** 2))


def silhouette_1d(values, labels) -> float:
    """Mean silhouette coefficient of a 1-D labelling, exact, in O(n log n).

    Mean distances to each cluster come from prefix sums over that cluster's
    sorted members. Points in singleton clusters score 0.
    """
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    present = np.unique(labels)
    if present.size < 2 or present.size >= values.size:
        raise ValueError("silhouette needs 2 <= clusters < samples")
    mean_dist = np.empty((present.size, values.size))
    sizes = np.empty(present.size, dtype=np.int64)
    for row, lab in enumerate(present):
        members = np.sort(values[labels == lab])
        sizes[row] = members.size
        prefix = np.concatenate([[0.0], np.cumsum(members)])
        pos = np.searchsorted(members, values, side="right")
        below = values * pos - prefix[pos]
        above = (prefix[-1] - prefix[pos]) - values * (members.size - pos)
        mean_dist[row] = below + above
    row_of = np.searchsorted(present, labels)
    own_size = sizes[row_of]
    own = mean_dist[row_of, np.arange(values.size)] / np.maximum(own_size - 1, 1)
    other = mean_dist / sizes[:, None]
    other[row_of, np.arange(values.size)] = np.inf
    nearest = other.min(axis=0)
    denom = np.maximum(own, nearest)
    s = np.where(denom > 0, (nearest - own) / np.where(denom > 0, denom, 1), 0.0)
    s[own_size == 1] = 0.0
    return float(s.mean())


def silhouette_select_k(
    values,
    k_range: Iterable[int] = range(2, 9),
    sample_cap: int = DEFAULT_SAMPLE_CAP,
    seed: int = 0,
) -> int:
    """Pick k with the best mean silhouette on a uniform subsample.

    k-means is fit on the full data; the silhouette is scored on at most
    ``sample_cap`` points drawn without replacement. Ties go to the smaller k.
    """
    ks = sorted(int(k) for k in k_range)
    if not ks or ks[0] < 2 or ks[-1] > 8:
        raise ValueError(f"k_range must lie within [2, 8], got {ks}")
    if sample_cap < 100:
        raise ValueError("sample_cap must be >= 100")
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("cannot select k for an empty sequence")
    if values.size > sample_cap:
        sample = np.sort(np.random.default_rng(seed).choice(values.size, sample_cap, replace=False))
    else:
        sample = np.arange(values.size)
    best_k, best_score = ks[0], -np.inf
    for k in ks:
        centroids, labels = kmeans_1d(values, k)
        sub = labels[sample]
        if np.unique(sub).size < 2 or np.unique(sub).size >= sample.size:
            continue
        score = silhouette_1d(values[sample], sub)
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def quantize(t: Tensor, k: int = DEFAULT_K, seed: Optional[int] = None,
             max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> QuantizedTensor:
    """Cluster every element of ``t`` (zeros included) and store labels plus float32 centroids."""
    flat = t.flat()
    centroids, _ = kmeans_1d(flat, k, seed, max_iter, tol)
    centroids32 = centroids.astype(np.float32)
    # assignment against the transmitted float32 centroids, not the float64 fit
    labels = nearest_labels(flat, centroids32)
    return QuantizedTensor(t.name, t.shape, t.kind, labels, centroids32)


def dequantize(q: QuantizedTensor) -> Tensor:
    return Tensor(q.name, q.shape, q.centroids[q.labels.astype(np.int64)], q.kind)
