"""Update compression (Top-z sparsification, k-means quantization, lossless
encoding) and a desk-scale federated learning simulator."""
from ._backend import BACKEND
from .codec import EncodedTensor, EncodedUpdate, decode, encode, parse_update
from .data import ClientShard, generate_synthetic, partition_noniid, partition_unbalanced
from .errors import DecodeError, RoundError, UnsupportedModeError
from .federated import FedConfig, RunLog, aggregate, run, sample_clients
from .model import Arch, LabeledDataset, ModelParams, forward_loss, init_random, train_local
from .quantize import QuantizedTensor, dequantize, kmeans_1d, quantize, silhouette_select_k
from .sparsify import SparsityConfig, top_z
from .tensor import Tensor, add_scaled, count_nonzero, subtract

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EncodedTensor",
    "EncodedUpdate",
    "decode",
    "encode",
    "parse_update",
    "ClientShard",
    "generate_synthetic",
    "partition_noniid",
    "partition_unbalanced",
    "DecodeError",
    "RoundError",
    "UnsupportedModeError",
    "FedConfig",
    "RunLog",
    "aggregate",
    "run",
    "sample_clients",
    "Arch",
    "LabeledDataset",
    "ModelParams",
    "forward_loss",
    "init_random",
    "train_local",
    "QuantizedTensor",
    "dequantize",
    "kmeans_1d",
    "quantize",
    "silhouette_select_k",
    "SparsityConfig",
    "top_z",
    "Tensor",
    "add_scaled",
    "count_nonzero",
    "subtract",
]
