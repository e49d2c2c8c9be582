"""Bit accounting, run output files, and multi-run comparison reports."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .federated import RunLog

HISTOGRAM_BINS = 32
ROUND_FIELDS = ["t", "test_loss", "test_accuracy", "train_loss", "train_accuracy", "bits", "mean_cr"]
# config keys that must agree for two runs to be comparable
COMPARABLE_KEYS = ("M", "seed", "rounds", "hidden", "data")


def compression_rate(baseline_bits: float, encoded_bits: float) -> float:
    if encoded_bits <= 0:
        raise ValueError(f"encoded size must be positive, got {encoded_bits}")
    return baseline_bits / encoded_bits


def size_histogram(sizes: Sequence[int], bins: int = HISTOGRAM_BINS):
    """Equal-width histogram over the observed range; returns ``(edges, counts)``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    counts, edges = np.histogram(sizes, bins=bins)
    return edges, counts


def _write_csv(path: Path, header, rows):
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def emit_run(log: RunLog, out_dir) -> dict[str, Path]:
    """Write ``run.json``, ``rounds.csv`` and ``sizes_histogram.csv`` into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = {"run": out / "run.json", "rounds": out / "rounds.csv", "histogram": out / "sizes_histogram.csv"}
    try:
        paths["run"].write_text(json.dumps(log.to_dict(), indent=1))
    except OSError as exc:
        raise OSError(f"cannot write {paths['run']}: {exc}") from exc

    _write_csv(paths["rounds"], ROUND_FIELDS, [
        [r.t, r.test_loss, r.test_accuracy, r.train_loss, r.train_accuracy, r.bits, r.mean_cr]
        for r in log.rounds
    ])
    edges, counts = size_histogram([u["bits"] for u in log.update_sizes])
    _write_csv(paths["histogram"], ["bin_low_bits", "bin_high_bits", "count"], [
        [edges[i], edges[i + 1], int(c)] for i, c in enumerate(counts)
    ])
    return paths


def load_run(path) -> RunLog:
    path = Path(path)
    if path.is_dir():
        path = path / "run.json"
    try:
        return RunLog.from_dict(json.loads(path.read_text()))
    except OSError as exc:
        raise OSError(f"cannot read run log {path}: {exc}") from exc


def rounds_to_accuracy(log: RunLog, target: float) -> Optional[int]:
    """First round whose test accuracy reaches ``target``, or None."""
    for r in log.rounds:
        if r.test_accuracy >= target:
            return r.t
    return None


def rounds_to_fraction_of_final(log: RunLog, fraction: float = 0.95) -> Optional[int]:
    if not log.rounds:
        return None
    return rounds_to_accuracy(log, fraction * log.rounds[-1].test_accuracy)


def run_label(log: RunLog) -> str:
    mode = log.config.get("mode", "?")
    return f"{mode}/{log.config.get('encoder')}" if mode == "fedzip" else mode


@dataclass
class ComparisonReport:
    rows: list[dict]
    warnings: list[str] = field(default_factory=list)

    def format(self) -> str:
        cols = [("run", 16, "s"), ("rounds", 7, "d"), ("train_acc", 10, ".4f"), ("test_acc", 10, ".4f"),
                ("test_loss", 10, ".4f"), ("delta_acc", 10, "+.4f"), ("mean_cr", 9, ".1f"),
                ("max_cr", 9, ".1f"), ("r95", 6, "s")]
        lines = ["".join(f"{name:>{w}}" if i else f"{name:<{w}}" for i, (name, w, _) in enumerate(cols))]
        for row in self.rows:
            cells = []
            for i, (name, w, fmt) in enumerate(cols):
                value = row[name]
                if name == "r95":
                    value = "-" if value is None else str(value)
                text = format(value, fmt)
                cells.append(f"{text:<{w}}" if i == 0 else f"{text:>{w}}")
            lines.append("".join(cells))
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines)


def compare_runs(logs: Sequence[RunLog], labels: Optional[Sequence[str]] = None) -> ComparisonReport:
    """Tabulate final metrics per run; accuracy deltas are relative to the first run."""
    if len(logs) < 2:
        raise ValueError("compare_runs needs at least two logs")
    labels = list(labels) if labels else [run_label(l) for l in logs]
    warnings = []
    ref = logs[0].config
    for label, log in zip(labels[1:], logs[1:]):
        for key in COMPARABLE_KEYS:
            if log.config.get(key) != ref.get(key):
                warnings.append(f"{label}: {key}={log.config.get(key)!r} differs from {labels[0]}: {ref.get(key)!r}")
    base_acc = logs[0].rounds[-1].test_accuracy if logs[0].rounds else math.nan
    rows = []
    for label, log in zip(labels, logs):
        last = log.rounds[-1] if log.rounds else None
        crs = [c for r in log.rounds for c in r.compression_rate.values()]
        rows.append({
            "run": label,
            "rounds": len(log.rounds),
            "train_acc": last.train_accuracy if last else math.nan,
            "test_acc": last.test_accuracy if last else math.nan,
            "test_loss": last.test_loss if last else math.nan,
            "delta_acc": (last.test_accuracy - base_acc) if last else math.nan,
            "mean_cr": float(np.mean(crs)) if crs else math.nan,
            "max_cr": float(np.max(crs)) if crs else math.nan,
            "r95": rounds_to_fraction_of_final(log),
        })
    return ComparisonReport(rows, warnings)
