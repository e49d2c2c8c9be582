"""Command-line entry point: ``fedzip run | compare | codec``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec
from ._backend import BACKEND
from .config import DataConfig, build_data, load_config
from .errors import DecodeError, RoundError
from .federated import FedConfig, compress_delta, run
from .metrics import compare_runs, emit_run, load_run
from .quantize import dequantize
from .sparsify import SparsityConfig
from .tensor import Tensor

log = logging.getLogger("fedzip")


def _k_arg(value: str):
    return value if value == "auto" else int(value)


def _add_compression_args(p: argparse.ArgumentParser):
    p.add_argument("--encoder", choices=codec.ENCODERS)
    p.add_argument("--keep-frac", type=float, help="weight keep fraction for Top-z")
    p.add_argument("--bias-keep-frac", type=float, help="bias keep fraction for Top-z")
    p.add_argument("--k", type=_k_arg, help="clusters per tensor, or 'auto' for silhouette selection")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedzip", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate federated training and write run logs")
    p.add_argument("--config", type=Path, help="INI config with [federated] and [data] sections")
    p.add_argument("--mode", choices=("fedavg", "fedsgd", "fedzip"))
    _add_compression_args(p)
    p.add_argument("--rounds", type=int)
    p.add_argument("--clients", type=int, help="total number of clients M")
    p.add_argument("--client-frac", type=float, help="client fraction C per round")
    p.add_argument("--local-lr", type=float)
    p.add_argument("--eta", type=float, help="global learning rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--partition", choices=("noniid", "unbalanced", "noniid-unbalanced"))
    p.add_argument("--save-updates", action="store_true",
                   help="also write every FedZip upload as an .fzip file under OUT/updates")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("compare", help="tabulate several run directories")
    p.add_argument("runs", nargs="+", type=Path)

    p = sub.add_parser("codec", help="encode, decode or inspect update files")
    csub = p.add_subparsers(dest="codec_command", required=True)
    e = csub.add_parser("encode", help="compress an .npz of delta tensors into an .fzip file")
    e.add_argument("input", type=Path)
    e.add_argument("output", type=Path)
    _add_compression_args(e)
    e.add_argument("--client", type=int, default=0)
    e.add_argument("--round", type=int, default=0)
    e.add_argument("--n", type=int, default=0, help="client data point count stored in the header")
    d = csub.add_parser("decode", help="reconstruct an .npz of dequantized tensors")
    d.add_argument("input", type=Path)
    d.add_argument("output", type=Path)
    i = csub.add_parser("inspect", help="print the per-tensor compression table")
    i.add_argument("input", type=Path)
    return parser


def _update_writer(updates_dir: Path):
    updates_dir.mkdir(parents=True, exist_ok=True)

    def sink(t, m, message):
        (updates_dir / f"round{t:03d}_client{m:03d}.fzip").write_bytes(message)

    return sink


def _cmd_run(args) -> int:
    fed, data = load_config(args.config) if args.config else ({}, {})
    overrides = {
        "mode": args.mode, "encoder": args.encoder, "rounds": args.rounds, "M": args.clients,
        "C": args.client_frac, "local_lr": args.local_lr, "eta": args.eta, "seed": args.seed,
        "k": args.k,
    }
    fed.update({k: v for k, v in overrides.items() if v is not None})
    if args.keep_frac is not None or args.bias_keep_frac is not None:
        base = fed.get("sparsity", SparsityConfig())
        fed["sparsity"] = SparsityConfig(
            args.keep_frac if args.keep_frac is not None else base.weight_keep_fraction,
            args.bias_keep_frac if args.bias_keep_frac is not None else base.bias_keep_fraction,
        )
    if args.partition:
        data["partition"] = args.partition
    config = FedConfig(**fed)
    data_cfg = DataConfig(**data)
    shards, test = build_data(data_cfg, config.M, config.seed)

    sink = _update_writer(args.out / "updates") if args.save_updates else None
    runlog = run(config, shards, test, keep_params=False, message_sink=sink)
    runlog.config["data"] = data_cfg.to_dict()
    paths = emit_run(runlog, args.out)
    last = runlog.rounds[-1] if runlog.rounds else None
    if last:
        print(f"{config.mode}: {len(runlog.rounds)} rounds, test accuracy {last.test_accuracy:.4f}, "
              f"loss {last.test_loss:.4f}, mean CR {np.mean([r.mean_cr for r in runlog.rounds]):.1f}x")
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0


def _cmd_compare(args) -> int:
    logs = [load_run(p) for p in args.runs]
    report = compare_runs(logs, [p.name for p in args.runs])
    print(report.format())
    return 0


def _load_npz(path: Path) -> list[Tensor]:
    with np.load(path) as npz:
        return [
            Tensor.from_array(name, npz[name], "bias" if name.endswith("bias") else "weight")
            for name in npz.files
        ]


def _cmd_codec(args) -> int:
    if args.codec_command == "encode":
        tensors = _load_npz(args.input)
        fed = {"mode": "fedzip"}
        if args.encoder:
            fed["encoder"] = args.encoder
        if args.k is not None:
            fed["k"] = args.k
        sparsity = SparsityConfig()
        fed["sparsity"] = SparsityConfig(
            args.keep_frac if args.keep_frac is not None else sparsity.weight_keep_fraction,
            args.bias_keep_frac if args.bias_keep_frac is not None else sparsity.bias_keep_fraction,
        )
        update = compress_delta(tensors, FedConfig(**fed), args.client, args.round, args.n)
        size = codec.write_update(args.output, update)
        print(codec.format_table(codec.compression_table(update)))
        total = sum(t.size for t in tensors)
        print(f"{size} bytes written, update CR {32 * total / (8 * size):.1f}x")
        return 0
    update = codec.read_update(args.input)
    if args.codec_command == "inspect":
        print(f"client {update.client_id}, round {update.round_index}, n_m {update.n_m}, "
              f"{len(update.tensors)} tensors")
        print(codec.format_table(codec.compression_table(update)))
        return 0
    tensors = [dequantize(q) for q in codec.decode_update(update)]
    np.savez(args.output, **{t.name: t.values for t in tensors})
    print(f"decoded {len(tensors)} tensors into {args.output}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", BACKEND)
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "codec": _cmd_codec}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, DecodeError, RoundError) as exc:
        print(f"fedzip {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
