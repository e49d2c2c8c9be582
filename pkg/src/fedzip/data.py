"""Synthetic classification data and non-iid / unbalanced client partitions."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import LabeledDataset


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    data: LabeledDataset

    @property
    def n_m(self) -> int:
        return len(self.data)


def _class_means(num_classes: int, dim: int, separation: float, rng) -> np.ndarray:
    if dim >= num_classes:
        # scaled basis vectors: every pair of means is exactly `separation` apart
        means = np.zeros((num_classes, dim))
        means[np.arange(num_classes), np.arange(num_classes)] = separation / np.sqrt(2.0)
        return means
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    return directions * separation / np.sqrt(2.0)


def generate_synthetic(
    num_classes: int,
    dim: int,
    n: int,
    class_separation: float,
    seed: int,
) -> LabeledDataset:
    """Unit-variance Gaussian blobs, one per class, in shuffled order.

    When ``dim >= num_classes`` the class means sit on scaled coordinate axes so
    every pair is ``class_separation`` apart; otherwise means are random unit
    directions with the same scale. Class counts differ by at most one.
    """
    if num_classes < 2 or dim < 2 or n < num_classes:
        raise ValueError(
            f"need num_classes >= 2, dim >= 2, n >= num_classes; got {num_classes}, {dim}, {n}"
        )
    if class_separation < 0:
        raise ValueError("class_separation must be non-negative")
    rng = np.random.default_rng(seed)
    means = _class_means(num_classes, dim, class_separation, rng)
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    features = means[labels] + rng.standard_normal((n, dim))
    return LabeledDataset(features.astype(np.float32), labels)


def train_test_split(data: LabeledDataset, test_fraction: float, seed: int):
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    n = len(data)
    n_test = max(1, int(round(n * test_fraction)))
    if n_test >= n:
        raise ValueError("split leaves no training data")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(order[n_test:])), data.subset(np.sort(order[:n_test]))


def partition_noniid(
    data: LabeledDataset, M: int, shards_per_client: int, seed: int
) -> list[ClientShard]:
    """Label-sorted shard partition: each client gets ``shards_per_client`` random contiguous shards."""
    if M < 1 or shards_per_client < 1:
        raise ValueError("M and shards_per_client must be >= 1")
    num_shards = M * shards_per_client
    if num_shards > len(data):
        raise ValueError(f"cannot cut {len(data)} points into {num_shards} non-empty shards")
    order = np.argsort(data.labels, kind="stable")
    shards = np.array_split(order, num_shards)
    assignment = np.random.default_rng(seed).permutation(num_shards)
    clients = []
    for m in range(M):
        picks = assignment[m * shards_per_client:(m + 1) * shards_per_client]
        index = np.concatenate([shards[s] for s in sorted(picks)])
        clients.append(ClientShard(m, data.subset(index)))
    return clients


def unbalanced_sizes(n: int, M: int, skew: float, rng) -> np.ndarray:
    """Client sizes proportional to lognormal(0, skew) draws, each >= 1, summing to ``n``."""
    if skew < 0:
        raise ValueError("skew must be non-negative")
    if M > n:
        raise ValueError(f"cannot give {M} clients at least one of {n} points")
    weights = rng.lognormal(0.0, skew, size=M) if skew > 0 else np.ones(M)
    spare = n - M
    raw = weights / weights.sum() * spare
    sizes = np.floor(raw).astype(np.int64)
    # largest-remainder rounding keeps the total exact
    remainder = spare - sizes.sum()
    if remainder:
        top = np.argsort(-(raw - sizes), kind="stable")[:remainder]
        sizes[top] += 1
    return sizes + 1


def partition_unbalanced(
    data: LabeledDataset, M: int, skew: float, seed: int, sort_by_label: bool = False
) -> list[ClientShard]:
    """Split ``data`` into ``M`` shards with lognormal-skewed sizes.

    With ``sort_by_label`` the shards are contiguous runs of label-sorted data,
    which combines the unbalanced and non-iid constraints.
    """
    rng = np.random.default_rng(seed)
    sizes = unbalanced_sizes(len(data), M, skew, rng)
    if sort_by_label:
        order = np.argsort(data.labels, kind="stable")
    else:
        order = rng.permutation(len(data))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [
        ClientShard(m, data.subset(np.sort(order[bounds[m]:bounds[m + 1]])))
        for m in range(M)
    ]


def load_csv(path, label_column: int | str = -1) -> LabeledDataset:
    """Read numeric feature columns plus one integer label column.

    A header row is detected when its first field does not parse as a number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: no rows")
    header = None
    try:
        float(rows[0][0])
    except ValueError:
        header, rows = rows[0], rows[1:]
    if isinstance(label_column, str):
        if header is None:
            raise ValueError(f"{path}: named label column {label_column!r} needs a header row")
        label_column = header.index(label_column)
    table = np.array(rows, dtype=np.float64)
    labels = table[:, label_column]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"{path}: label column contains non-integer values")
    features = np.delete(table, label_column % table.shape[1], axis=1)
    return LabeledDataset(features.astype(np.float32), labels.astype(np.int64))


def shard_sizes(shards: Sequence[ClientShard]) -> list[int]:
    return [s.n_m for s in shards]
