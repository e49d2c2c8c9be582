"""A small dense ReLU/softmax classifier trained with plain minibatch SGD.

Parameters live in float32 :class:`~fedzip.tensor.Tensor` objects so the
deltas produced by local training have the same representation the codec
compresses. The math helpers are dtype-agnostic; :func:`gradient_check`
runs them in float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from .tensor import Tensor, tensor_name

FULL_BATCH = math.inf


@dataclass(frozen=True)
class Arch:
    """Layer sizes from input to output, e.g. ``(d, 64, num_classes)``."""

    sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2:
            raise ValueError(f"architecture needs at least an input and an output size, got {sizes}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def num_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    @classmethod
    def default(cls, input_dim: int, num_classes: int, hidden: Sequence[int] = (64,)) -> "Arch":
        return cls((input_dim, *hidden, num_classes))


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ValueError(f"features must be an n x d matrix, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ValueError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if labels.shape[0] < 1:
            raise ValueError("dataset is empty")
        if labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "features", features.astype(np.float32, copy=False))
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index])

    @classmethod
    def concat(cls, parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
        )


@dataclass(frozen=True)
class ModelParams:
    arch: Arch
    layers: tuple[tuple[Tensor, Tensor], ...]

    def __post_init__(self):
        layers = tuple((w, b) for w, b in self.layers)
        if len(layers) != self.arch.num_layers:
            raise ValueError(f"expected {self.arch.num_layers} layers, got {len(layers)}")
        for i, (w, b) in enumerate(layers):
            fan_in, fan_out = self.arch.sizes[i], self.arch.sizes[i + 1]
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(
                    f"layer {i}: expected weight {(fan_in, fan_out)} and bias {(fan_out,)}, "
                    f"got {w.shape} and {b.shape}"
                )
        object.__setattr__(self, "layers", layers)

    def tensors(self) -> Iterator[Tensor]:
        for w, b in self.layers:
            yield w
            yield b

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors())

    def arrays(self) -> list[np.ndarray]:
        return [t.values for t in self.tensors()]

    @classmethod
    def from_arrays(cls, arch: Arch, arrays: Sequence[np.ndarray]) -> "ModelParams":
        if len(arrays) != 2 * arch.num_layers:
            raise ValueError(f"expected {2 * arch.num_layers} arrays, got {len(arrays)}")
        layers = []
        for i in range(arch.num_layers):
            w = Tensor.from_array(tensor_name(i, "weight"), arrays[2 * i], "weight")
            b = Tensor.from_array(tensor_name(i, "bias"), arrays[2 * i + 1], "bias")
            layers.append((w, b))
        return cls(arch, tuple(layers))

    @classmethod
    def from_tensors(cls, arch: Arch, tensors: Sequence[Tensor]) -> "ModelParams":
        tensors = list(tensors)
        return cls(arch, tuple(zip(tensors[0::2], tensors[1::2])))

    def equals(self, other: "ModelParams") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def init_random(arch: Arch, seed: int) -> ModelParams:
    """He-normal weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    if not isinstance(arch, Arch):
        arch = Arch(tuple(arch))
    rng = np.random.default_rng(seed)
    arrays = []
    for fan_in, fan_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        arrays.append(w.astype(np.float32))
        arrays.append(np.zeros(fan_out, dtype=np.float32))
    return ModelParams.from_arrays(arch, arrays)


def _check_batch(arch: Arch, batch: LabeledDataset):
    if batch.dim != arch.input_dim:
        raise ValueError(f"batch has {batch.dim} features, model expects {arch.input_dim}")
    if batch.labels.max() >= arch.num_classes:
        raise ValueError(f"label {batch.labels.max()} out of range for {arch.num_classes} classes")


def _forward(arrays: Sequence[np.ndarray], x: np.ndarray):
    """Return per-layer inputs and the output logits."""
    activations = [x]
    h = x
    n_layers = len(arrays) // 2
    for i in range(n_layers):
        z = h @ arrays[2 * i] + arrays[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(z, 0)
            activations.append(h)
        else:
            h = z
    return activations, h


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sum_exp = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sum_exp)
    loss = -log_probs[np.arange(labels.shape[0]), labels].mean()
    return loss, exp / sum_exp


def loss_and_grads(arrays: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient w.r.t. every array, in the arrays' dtype."""
    activations, logits = _forward(arrays, x)
    loss, probs = _softmax_xent(logits, y)
    n = x.shape[0]
    dz = probs
    dz[np.arange(n), y] -= 1
    dz /= n
    grads: list[Optional[np.ndarray]] = [None] * len(arrays)
    for i in range(len(arrays) // 2 - 1, -1, -1):
        grads[2 * i] = activations[i].T @ dz
        grads[2 * i + 1] = dz.sum(axis=0)
        if i > 0:
            dh = dz @ arrays[2 * i].T
            # subgradient of ReLU at 0 is 0
            dz = dh * (activations[i] > 0)
    return float(loss), grads


def forward_loss(params: ModelParams, batch: LabeledDataset) -> tuple[float, float]:
    """Mean softmax cross-entropy and argmax accuracy over ``batch``."""
    _check_batch(params.arch, batch)
    _, logits = _forward(params.arrays(), batch.features)
    loss, _ = _softmax_xent(logits.astype(np.float64), batch.labels)
    accuracy = float(np.mean(logits.argmax(axis=1) == batch.labels))
    return float(loss), accuracy


def train_local(
    params: ModelParams,
    data: LabeledDataset,
    epochs: int,
    batch_size: float,
    lr: float,
    seed: int,
) -> ModelParams:
    """Run ``epochs`` passes of minibatch SGD and return new parameters.

    ``batch_size=math.inf`` (or ``None``) uses the whole dataset as one batch.
    Minibatch order is reshuffled each epoch from ``seed``; a trailing
    incomplete batch is kept.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if len(data) < 1:
        raise ValueError("cannot train on an empty dataset")
    _check_batch(params.arch, data)
    if batch_size is None:
        batch_size = FULL_BATCH
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")

    arrays = [a.copy() for a in params.arrays()]
    step = np.float32(lr)
    n = len(data)
    full = batch_size >= n
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        if full:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            b = int(batch_size)
            batches = [order[i:i + b] for i in range(0, n, b)]
        for index in batches:
            _, grads = loss_and_grads(arrays, data.features[index], data.labels[index])
            for a, g in zip(arrays, grads):
                a -= step * g.astype(np.float32, copy=False)
    return ModelParams.from_arrays(params.arch, arrays)


def gradient_check(params: ModelParams, batch: LabeledDataset, epsilon: float = 1e-6) -> float:
    """Max relative error between backprop and central finite differences.

    Runs in float64. Relative error per element is
    ``|analytic - numeric| / max(|analytic| + |numeric|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    _check_batch(params.arch, batch)
    arrays = [a.astype(np.float64) for a in params.arrays()]
    x = batch.features.astype(np.float64)
    y = batch.labels
    _, analytic = loss_and_grads(arrays, x, y)
    worst = 0.0
    for a, g in zip(arrays, analytic):
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus, _ = loss_and_grads(arrays, x, y)
            flat[i] = orig - epsilon
            minus, _ = loss_and_grads(arrays, x, y)
            flat[i] = orig
            numeric = (plus - minus) / (2 * epsilon)
            err = abs(gflat[i] - numeric) / max(abs(gflat[i]) + abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
