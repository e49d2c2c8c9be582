"""INI run-configuration files.

Two sections, both optional::

    [federated]          ; any FedConfig field
    mode = fedzip
    encoder = doap
    M = 50
    C = 1.0
    B = 32               ; or "inf"
    weight_keep_fraction = 0.1
    bias_keep_fraction = 0.5
    k = 3                ; or "auto"
    hidden = 64          ; comma-separated hidden layer sizes

    [data]               ; DataConfig fields
    num_classes = 10
    partition = unbalanced
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .data import (
    generate_synthetic,
    load_csv,
    partition_noniid,
    partition_unbalanced,
    train_test_split,
)
from .federated import FedConfig
from .sparsify import SparsityConfig

PARTITIONS = ("noniid", "unbalanced", "noniid-unbalanced")


@dataclass
class DataConfig:
    num_classes: int = 10
    dim: int = 20
    n: int = 36000
    separation: float = 4.0
    test_fraction: float = 1 / 6
    partition: str = "unbalanced"
    shards_per_client: int = 2
    skew: float = 1.0
    csv: Optional[str] = None
    label_column: int = -1
    seed: Optional[int] = None

    def __post_init__(self):
        if self.partition not in PARTITIONS:
            raise ValueError(f"partition must be one of {PARTITIONS}, got {self.partition!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def build_data(cfg: DataConfig, M: int, seed: int):
    """Return ``(shards, test)`` for a data config."""
    seed = cfg.seed if cfg.seed is not None else seed
    if cfg.csv:
        data = load_csv(cfg.csv, cfg.label_column)
    else:
        data = generate_synthetic(cfg.num_classes, cfg.dim, cfg.n, cfg.separation, seed)
    train, test = train_test_split(data, cfg.test_fraction, seed)
    if cfg.partition == "noniid":
        shards = partition_noniid(train, M, cfg.shards_per_client, seed)
    else:
        shards = partition_unbalanced(train, M, cfg.skew, seed,
                                      sort_by_label=cfg.partition == "noniid-unbalanced")
    return shards, test


_INT_FIELDS = {"M", "E", "rounds", "seed", "workers"}
_FLOAT_FIELDS = {"C", "eta", "local_lr"}


def _parse_federated(section) -> dict:
    out = {}
    sparsity = {}
    for key, raw in section.items():
        value = raw.strip()
        if key in ("weight_keep_fraction", "bias_keep_fraction"):
            sparsity[key] = float(value)
        elif key in _INT_FIELDS:
            out[key] = int(value)
        elif key in _FLOAT_FIELDS:
            out[key] = float(value)
        elif key == "B":
            out[key] = math.inf if value.lower() in ("inf", "infinity") else int(value)
        elif key == "k":
            out[key] = value if value == "auto" else int(value)
        elif key == "hidden":
            out[key] = tuple(int(h) for h in value.split(",") if h.strip())
        elif key in ("mode", "encoder"):
            out[key] = value
        else:
            raise ValueError(f"unknown [federated] key {key!r}")
    if sparsity:
        out["sparsity"] = SparsityConfig(**sparsity)
    return out


def _parse_data(section) -> dict:
    types = {f.name: f.type for f in fields(DataConfig)}
    out = {}
    for key, raw in section.items():
        if key not in types:
            raise ValueError(f"unknown [data] key {key!r}")
        value = raw.strip()
        if key in ("partition", "csv"):
            out[key] = value
        elif key in ("separation", "test_fraction", "skew"):
            out[key] = float(value)
        else:
            out[key] = int(value)
    return out


def load_config(path) -> tuple[dict, dict]:
    """Parse a config file into FedConfig and DataConfig keyword dicts."""
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep "M", "C", "E", "B" case-sensitive
    path = Path(path)
    try:
        if not parser.read(path):
            raise OSError(f"cannot read config file {path}")
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - {"federated", "data"}
    if unknown:
        raise ValueError(f"{path}: unknown sections {sorted(unknown)}")
    fed = _parse_federated(parser["federated"]) if parser.has_section("federated") else {}
    data = _parse_data(parser["data"]) if parser.has_section("data") else {}
    return fed, data


def make_configs(fed_kwargs: dict, data_kwargs: dict) -> tuple[FedConfig, DataConfig]:
    return FedConfig(**fed_kwargs), DataConfig(**data_kwargs)
