"""Metric tables and run summaries on disk.

``metrics.csv`` starts with ``#`` provenance lines (seed and the resolved
configuration as one-line JSON), followed by a header and one row per
evaluation snapshot with the columns in ``METRIC_COLUMNS``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .config import ExperimentConfig
from .engine import MetricsLog, Snapshot

METRIC_COLUMNS = ("virtual_time_s", "accuracy", "loss", "cum_cost", "msgs", "bytes")
SECONDS_PER_HOUR = 3600.0


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _clean(obj):
    # json cannot carry nan/inf; absent values become null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def metrics_csv_text(snapshots: Iterable[Snapshot], config: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# seed: {config.get('seed')}\n")
    buf.write("# config: " + json.dumps(_clean(config), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for s in snapshots:
        w.writerow([repr(float(s.time)), repr(float(s.accuracy)), repr(float(s.loss)),
                    repr(float(s.cum_cost)), s.msgs, s.bytes])
    return buf.getvalue()


def read_metrics_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Parse a metrics table back into ``(provenance, rows)``."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# config: "):
            meta["config"] = json.loads(line[len("# config: "):])
        elif line.startswith("# seed: "):
            meta["seed"] = int(line[len("# seed: "):])
        elif not line.startswith("#"):
            body.append(line)
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
        raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
    rows = []
    for r in reader:
        rows.append({
            "virtual_time_s": float(r["virtual_time_s"]),
            "accuracy": float(r["accuracy"]),
            "loss": float(r["loss"]),
            "cum_cost": float(r["cum_cost"]),
            "msgs": int(r["msgs"]),
            "bytes": int(r["bytes"]),
        })
    return meta, rows


def time_to_target(snapshots: Sequence[Snapshot], target: float) -> Snapshot | None:
    """First snapshot whose accuracy reaches ``target``; ``None`` if never reached."""
    for s in snapshots:
        if s.accuracy >= target:
            return s
    return None


def summarize(log: MetricsLog, cfg: ExperimentConfig) -> dict:
    last = log.snapshots[-1]
    hits = [time_to_target(log.snapshots, t) for t in cfg.targets]
    rounds = log.rounds
    return {
        "seed": cfg.seed,
        "flags": log.flags,
        "final_accuracy": last.accuracy,
        "final_loss": last.loss,
        "total_cost": log.total_cost,
        "center_cost": log.center_cost,
        "messages": log.messages,
        "bytes": log.bytes,
        "rounds": rounds,
        "transfers_per_round": log.messages / rounds if rounds else None,
        "targets": list(cfg.targets),
        "time_to_target_h": [None if h is None else h.time / SECONDS_PER_HOUR for h in hits],
        "cost_to_target": [None if h is None else h.cum_cost for h in hits],
        "final_versions": log.final_versions,
        "selection_counts": log.selection_counts,
        "config": cfg.to_dict(),
    }


def write_run(outdir: str | Path, log: MetricsLog, cfg: ExperimentConfig, audit: bool = True) -> dict:
    outdir = Path(outdir)
    summary = summarize(log, cfg)
    atomic_write_text(outdir / "metrics.csv", metrics_csv_text(log.snapshots, cfg.to_dict()))
    atomic_write_text(outdir / "summary.json", dumps(summary))
    if audit:
        atomic_write_text(outdir / "audit.json", dumps({"config": cfg.to_dict(), **log.to_dict()}))
    return summary
