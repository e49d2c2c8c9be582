"""Synchronous federated training: FedAvg, FedSGD and FedZip rounds.

Each round samples clients, trains them from the broadcast global model,
moves their deltas through the (possibly compressing) upload path, and
applies the data-size weighted average of the deltas to the global model.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import codec
from .data import ClientShard
from .errors import RoundError
from .model import Arch, LabeledDataset, ModelParams, forward_loss, init_random, train_local
from .quantize import dequantize, quantize, silhouette_select_k
from .sparsify import SparsityConfig, sparsify
from .tensor import Tensor, subtract

log = logging.getLogger(__name__)

MODES = ("fedavg", "fedsgd", "fedzip")
DEFAULT_ETA = {"fedavg": 0.25, "fedzip": 0.25, "fedsgd": 0.6}


@dataclass
class FedConfig:
    """Run settings. ``eta=None`` picks the per-mode default global learning rate.

    ``k="auto"`` selects the cluster count per tensor with the silhouette
    index. ``fedsgd`` always trains with ``E=1`` on the full local batch.
    """

    M: int = 50
    C: float = 1.0
    E: int = 1
    B: float = 32
    eta: Optional[float] = None
    local_lr: float = 0.05
    rounds: int = 20
    mode: str = "fedavg"
    encoder: str = "doap"
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    k: Union[int, str] = 3
    seed: int = 0
    hidden: tuple[int, ...] = (64,)
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.encoder not in codec.ENCODERS:
            raise ValueError(f"encoder must be one of {codec.ENCODERS}, got {self.encoder!r}")
        if not 0 <= self.C <= 1:
            raise ValueError(f"client fraction C must be in [0, 1], got {self.C}")
        if self.M < 1 or self.rounds < 0 or self.workers < 1:
            raise ValueError("M and workers must be >= 1 and rounds >= 0")
        if self.B is None:
            self.B = math.inf
        if self.mode == "fedsgd":
            self.E, self.B = 1, math.inf
        if self.E < 1 or self.B < 1:
            raise ValueError("E and B must be >= 1")
        if self.eta is None:
            self.eta = DEFAULT_ETA[self.mode]
        if isinstance(self.sparsity, dict):
            self.sparsity = SparsityConfig(**self.sparsity)
        if self.k != "auto" and int(self.k) < 1:
            raise ValueError(f"k must be >= 1 or 'auto', got {self.k}")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["B"] = "inf" if math.isinf(self.B) else int(self.B)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FedConfig":
        d = dict(d)
        if d.get("B") in ("inf", "infinity", None):
            d["B"] = math.inf
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)


@dataclass
class RoundResult:
    t: int
    test_loss: float
    test_accuracy: float
    train_loss: float
    train_accuracy: float
    participants: list[int]
    uploaded_bits: dict[int, int]
    compression_rate: dict[int, float]
    params_digest: str
    params: Optional[ModelParams] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "params"}
        d["uploaded_bits"] = {str(k): v for k, v in self.uploaded_bits.items()}
        d["compression_rate"] = {str(k): v for k, v in self.compression_rate.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RoundResult":
        d = dict(d)
        d["uploaded_bits"] = {int(k): v for k, v in d["uploaded_bits"].items()}
        d["compression_rate"] = {int(k): v for k, v in d["compression_rate"].items()}
        return cls(**d)

    @property
    def bits(self) -> int:
        return sum(self.uploaded_bits.values())

    @property
    def mean_cr(self) -> float:
        return float(np.mean(list(self.compression_rate.values())))


@dataclass
class RunLog:
    config: dict
    rounds: list[RoundResult] = field(default_factory=list)
    update_sizes: list[dict] = field(default_factory=list)
    baseline_bits: int = 0

    @property
    def b_total(self) -> int:
        return sum(r["bits"] for r in self.update_sizes)

    @property
    def final_params(self) -> Optional[ModelParams]:
        return self.rounds[-1].params if self.rounds else None

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "baseline_bits": self.baseline_bits,
            "b_total": self.b_total,
            "rounds": [r.to_dict() for r in self.rounds],
            "update_sizes": self.update_sizes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunLog":
        return cls(
            config=d["config"],
            rounds=[RoundResult.from_dict(r) for r in d["rounds"]],
            update_sizes=list(d["update_sizes"]),
            baseline_bits=d.get("baseline_bits", 0),
        )


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for a in params.arrays():
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def num_sampled(M: int, C: float) -> int:
    return max(int(math.floor(C * M + 0.5)), 1)


def sample_clients(M: int, C: float, round_seed) -> list[int]:
    """Uniform sample of ``max(round(C*M), 1)`` client ids without replacement, sorted."""
    if not 0 <= C <= 1:
        raise ValueError(f"client fraction C must be in [0, 1], got {C}")
    m = num_sampled(M, C)
    if m >= M:
        return list(range(M))
    rng = np.random.default_rng(round_seed)
    return sorted(int(i) for i in rng.choice(M, size=m, replace=False))


def aggregate(deltas: Sequence[tuple[Sequence[Tensor], int]], w_t: ModelParams, eta: float) -> ModelParams:
    """``w_t - eta * sum_m (n_m / sum n) * delta_m``, accumulated in float64."""
    if not deltas:
        raise ValueError("aggregate needs at least one client delta")
    total = sum(n for _, n in deltas)
    if total <= 0:
        raise ValueError("client data counts must sum to a positive number")
    out = []
    for i, w in enumerate(w_t.tensors()):
        acc = np.zeros(w.shape, dtype=np.float64)
        for tensors, n in deltas:
            d = tensors[i]
            if d.shape != w.shape:
                raise ValueError(f"delta {d.name}{list(d.shape)} does not match {w.name}{list(w.shape)}")
            acc += (n / total) * d.values.astype(np.float64)
        out.append(w.with_values((w.values.astype(np.float64) - eta * acc).astype(np.float32)))
    return ModelParams.from_tensors(w_t.arch, out)


@dataclass
class ClientUpload:
    client_id: int
    n_m: int
    delta: list[Tensor]
    bits: int
    message: Optional[bytes] = None


def compress_delta(delta: Sequence[Tensor], config: FedConfig, client_id=0, round_index=0,
                   n_m=0, seed=0) -> codec.EncodedUpdate:
    """Sparsify, quantize and encode one client's delta tensors."""
    sparse = sparsify(delta, config.sparsity)
    quantized = []
    for i, t in enumerate(sparse):
        k = config.k
        if k == "auto":
            k = silhouette_select_k(t.flat(), seed=seed + i)
        quantized.append(quantize(t, int(k)))
    return codec.encode_update(quantized, config.encoder, client_id, round_index, n_m)


def decompress_update(message: bytes) -> tuple[codec.EncodedUpdate, list[Tensor]]:
    update = codec.parse_update(message)
    return update, [dequantize(q) for q in codec.decode_update(update)]


def _client_seed(seed: int, t: int, m: int) -> int:
    return int(np.random.SeedSequence([seed, t, m]).generate_state(1)[0])


def client_update(config: FedConfig, params: ModelParams, shard: ClientShard, t: int) -> ClientUpload:
    seed = _client_seed(config.seed, t, shard.client_id)
    local = train_local(params, shard.data, config.E, config.B, config.local_lr, seed)
    delta = [subtract(w, w_local) for w, w_local in zip(params.tensors(), local.tensors())]
    if config.mode != "fedzip":
        return ClientUpload(shard.client_id, shard.n_m, delta, 32 * sum(d.size for d in delta))
    update = compress_delta(delta, config, shard.client_id, t, shard.n_m, seed)
    message = update.to_bytes()
    return ClientUpload(shard.client_id, shard.n_m, delta, 8 * len(message), message)


def _server_receive(upload: ClientUpload) -> list[Tensor]:
    if upload.message is None:
        return upload.delta
    update, delta = decompress_update(upload.message)
    if update.client_id != upload.client_id:
        raise RoundError(f"message claims client {update.client_id}, sent by {upload.client_id}")
    return delta


def _infer_arch(config: FedConfig, shards: Sequence[ClientShard], test: LabeledDataset) -> Arch:
    num_classes = int(max(max(int(s.data.labels.max()) for s in shards), int(test.labels.max()))) + 1
    return Arch((shards[0].data.dim, *config.hidden, num_classes))


def run(
    config: FedConfig,
    shards: Sequence[ClientShard],
    test: LabeledDataset,
    init: Optional[ModelParams] = None,
    keep_params: bool = True,
    message_sink: Optional[Callable[[int, int, bytes], None]] = None,
) -> RunLog:
    """Execute ``config.rounds`` synchronous rounds and return the full log.

    ``message_sink(t, client_id, message)`` receives every serialized FedZip
    upload, e.g. to archive update files.
    """
    if not shards:
        raise ValueError("no client shards")
    if len(shards) != config.M:
        raise ValueError(f"config.M={config.M} but {len(shards)} shards were given")
    if [s.client_id for s in shards] != list(range(config.M)):
        raise ValueError("shards must be ordered with client ids 0..M-1")
    arch = init.arch if init is not None else _infer_arch(config, shards, test)
    params = init if init is not None else init_random(arch, config.seed)
    train_all = LabeledDataset.concat([s.data for s in shards])
    baseline_bits = 32 * params.num_parameters
    runlog = RunLog(config=config.to_dict(), baseline_bits=baseline_bits)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(1, config.rounds + 1):
            selected = sample_clients(config.M, config.C, [config.seed, t])

            def work(m, params=params, t=t):
                try:
                    upload = client_update(config, params, shards[m], t)
                    return upload, _server_receive(upload)
                except Exception as exc:
                    raise RoundError(f"round {t}: client {m} failed: {exc}") from exc

            results = list(pool.map(work, selected)) if pool else [work(m) for m in selected]
            try:
                params = aggregate([(delta, up.n_m) for up, delta in results], params, config.eta)
            except ValueError as exc:
                raise RoundError(f"round {t}: aggregation failed (diverged?): {exc}") from exc

            test_loss, test_acc = forward_loss(params, test)
            train_loss, train_acc = forward_loss(params, train_all)
            if not (math.isfinite(test_loss) and math.isfinite(train_loss)):
                raise RoundError(f"round {t}: loss is not finite, training diverged")
            bits = {up.client_id: up.bits for up, _ in results}
            for up, _ in results:
                if message_sink is not None and up.message is not None:
                    message_sink(t, up.client_id, up.message)
                runlog.update_sizes.append({"round": t, "client": up.client_id, "bits": up.bits})
            runlog.rounds.append(RoundResult(
                t=t,
                test_loss=test_loss,
                test_accuracy=test_acc,
                train_loss=train_loss,
                train_accuracy=train_acc,
                participants=list(selected),
                uploaded_bits=bits,
                compression_rate={m: baseline_bits / b for m, b in bits.items()},
                params_digest=params_digest(params),
                params=params if keep_params or t == config.rounds else None,
            ))
            log.info("round %d: test acc %.4f loss %.4f, mean CR %.1f",
                     t, test_acc, test_loss, runlog.rounds[-1].mean_cr)
    finally:
        if pool:
            pool.shutdown()
    return runlog
