"""Run, compare and sweep orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import copy
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from .artifacts import SECONDS_PER_HOUR, atomic_write_text, dumps, time_to_target, write_run
from .config import ConfigError, apply_variant, build_config, set_override
from .engine import MetricsLog, run

SWEEP_PARAMS = ("rotation_interval", "alpha", "centers", "containers", "active_planets")


def run_raw(raw: dict) -> MetricsLog:
    return run(build_config(copy.deepcopy(raw)))


def _run_many(raws: Sequence[dict], jobs: int) -> list[MetricsLog]:
    if jobs <= 1 or len(raws) <= 1:
        return [run_raw(r) for r in raws]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_raw, raws))


def with_seed(raw: dict, seed: int) -> dict:
    raw = copy.deepcopy(raw)
    raw["seed"] = seed
    return raw


def _mean_std(xs):
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def compare(raws: dict[str, dict], seeds: Sequence[int], targets: Sequence[float],
            outdir: str | Path | None = None, jobs: int = 1) -> dict:
    """Run every named variant over the same seeds and align them on accuracy targets.

    Sharing seeds keeps data partitions identical across variants.
    """
    if len(raws) < 2:
        raise ConfigError(["compare needs at least two variants"])
    names = list(raws)
    jobs_list = [(name, s) for name in names for s in seeds]
    logs = _run_many([with_seed(raws[name], s) for name, s in jobs_list], jobs)
    by_variant: dict[str, list[MetricsLog]] = {name: [] for name in names}
    for (name, _), log in zip(jobs_list, logs):
        by_variant[name].append(log)

    table = []
    for name in names:
        vlogs = by_variant[name]
        for t in targets:
            hits = [time_to_target(log.snapshots, t) for log in vlogs]
            tm, ts = _mean_std([None if h is None else h.time / SECONDS_PER_HOUR for h in hits])
            cm, cs = _mean_std([None if h is None else h.cum_cost for h in hits])
            mm, ms = _mean_std([None if h is None else h.msgs for h in hits])
            table.append({"variant": name, "target": t, "reached": sum(h is not None for h in hits),
                          "runs": len(hits), "time_h": tm, "time_h_std": ts, "cost": cm, "cost_std": cs,
                          "msgs": mm, "msgs_std": ms})
    per_variant = {}
    for name in names:
        vlogs = by_variant[name]
        fa = _mean_std([log.snapshots[-1].accuracy for log in vlogs])
        tpr = _mean_std([log.messages / log.rounds if log.rounds else None for log in vlogs])
        per_variant[name] = {"final_accuracy": fa[0], "final_accuracy_std": fa[1],
                             "transfers_per_round": tpr[0], "messages": _mean_std([log.messages for log in vlogs])[0],
                             "flags": vlogs[0].flags}
    result = {"seeds": list(seeds), "targets": list(targets), "table": table, "variants": per_variant,
              "configs": {name: raws[name] for name in names}}
    if outdir is not None:
        outdir = Path(outdir)
        atomic_write_text(outdir / "comparison.json", dumps(result))
        atomic_write_text(outdir / "comparison.csv", _table_csv(table))
    return result


def _table_csv(rows) -> str:
    cols = ["variant", "target", "reached", "runs", "time_h", "time_h_std", "cost", "cost_std", "msgs", "msgs_std"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("-" if r[c] is None else str(r[c]) for c in cols))
    return "\n".join(lines) + "\n"


def variant_raws(raw: dict, variants: Sequence[str]) -> dict[str, dict]:
    return {v: apply_variant(raw, v) for v in variants}


def sweep_override(raw: dict, param: str, value) -> dict:
    raw = copy.deepcopy(raw)
    if param == "rotation_interval":
        raw["rotation_interval"] = value
    elif param == "alpha":
        set_override(raw, "data.alpha", value)
    elif param == "containers":
        for c in raw["centers"]:
            c["containers"] = int(value)
            c.pop("container_speeds", None)
    elif param == "active_planets":
        for c in raw["centers"]:
            c["active_planets"] = int(value)
    elif param == "centers":
        n = int(value)
        template = raw["centers"][0]
        raw["centers"] = [{**copy.deepcopy(template), "id": i + 1} for i in range(n)]
        lat = raw["inter_dc"]["latency"]
        off = [lat[i][j] for i in range(len(lat)) for j in range(len(lat)) if i != j]
        d = statistics.fmean(off) if off else 0.0
        raw["inter_dc"]["latency"] = [[0.0 if i == j else d for j in range(n)] for i in range(n)]
        if isinstance(raw["inter_dc"].get("bandwidth"), list):
            bws = [x for row in raw["inter_dc"]["bandwidth"] for x in row if x]
            raw["inter_dc"]["bandwidth"] = statistics.fmean(bws)
    else:
        raise ConfigError([f"cannot sweep {param!r}; choose from {list(SWEEP_PARAMS)}"])
    return raw


def sweep(raw: dict, param: str, values: Sequence, seeds: Sequence[int], outdir: str | Path | None = None,
          jobs: int = 1, fraction: float = 0.9) -> dict:
    """Vary one parameter; report final accuracy and time to ``fraction`` of it per value."""
    points = [(v, s) for v in values for s in seeds]
    raws = [with_seed(sweep_override(raw, param, v), s) for v, s in points]
    for r in raws:
        build_config(copy.deepcopy(r))
    logs = _run_many(raws, jobs)
    rows = []
    for (v, s), log, r in zip(points, logs, raws):
        final = log.snapshots[-1].accuracy
        hit = time_to_target(log.snapshots, fraction * final) if math.isfinite(final) else None
        rows.append({"param": param, "value": v, "seed": s, "final_accuracy": final,
                     "final_loss": log.snapshots[-1].loss,
                     "time_to_fraction_s": None if hit is None else hit.time,
                     "messages": log.messages, "total_cost": log.total_cost})
        if outdir is not None:
            write_run(Path(outdir) / f"{param}={v}" / f"seed={s}", log, build_config(copy.deepcopy(r)), audit=False)
    result = {"param": param, "values": list(values), "seeds": list(seeds), "fraction": fraction, "rows": rows}
    if outdir is not None:
        atomic_write_text(Path(outdir) / "sweep.json", dumps(result))
    return result
