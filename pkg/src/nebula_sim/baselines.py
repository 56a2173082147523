"""Comparators: synchronous FedAvg and the NebulaFL-Aggr inter-DC step.

FedAvg runs on the same world (data, containers, resources, links) as the
asynchronous simulator. Each round is a barrier in virtual time: the global
model is broadcast from the hub center, selected containers queue for
resource slots in their own center, and the round ends when the last upload
lands.
"""

from __future__ import annotations

import heapq
import math
from typing import Callable, Sequence

import numpy as np

from .aggregation import global_aggregate, master_gen
from .config import ExperimentConfig
from .core import CenterState, ModelParams, ViolationError, weighted_mean
from .engine import Lease, MetricsLog, Snapshot, World, algorithm_flags, build_world, sample_runtime
from .rotation import BYTES_PER_PARAM, RotationMessage, apply_stellar

HUB = 1


def aggr_rotation_step(centers: Sequence[CenterState], now: float = 0.0) -> list[CenterState]:
    """Synchronous inter-DC aggregation: every stellar becomes the version-weighted mean of all masters.

    Costs ``2 * len(centers)`` transfers (one upload and one broadcast per center).
    """
    masters = [master_gen(c.planets) for c in centers]
    versions = [c.avg_version() for c in centers]
    shared = global_aggregate(masters, versions)
    shared_version = math.fsum(versions) / len(versions)
    for c, v in zip(centers, versions):
        c.recorded_avg_version = v
        c.rotation_count += 1
        if c.decay is not None:
            c.decay.reset(now)
        apply_stellar(c, RotationMessage(HUB, c.id, shared, shared_version, now))
    return list(centers)


def aggr_transfers_per_step(n_centers: int) -> int:
    return 2 * n_centers


def fedavg_round(
    global_params: ModelParams,
    selected: Sequence[int],
    world: World,
    now: float,
    round_index: int,
) -> tuple[ModelParams, float, list[Lease], int]:
    """One synchronous FedAvg round starting at ``now``.

    Returns ``(new_global, end_time, leases, cross_dc_transfers)``. The new
    model is the shard-size-weighted mean of the trained models; the round
    ends with the slowest upload.
    """
    if len(selected) == 0:
        raise ViolationError("fedavg round needs at least one selected container")
    by_id = {ct.id: ct for cts in world.containers.values() for ct in cts}
    nbytes = int(global_params.shape[0]) * BYTES_PER_PARAM
    links = world.links

    # per center resource slots, each a heap of (free_at, resource_id, slot)
    slots = {}
    for c, rs in world.resources.items():
        heap = [(now, r.id, s) for r in rs for s in range(r.capacity)]
        heapq.heapify(heap)
        slots[c] = heap
    res = {(r.center, r.id): r for rs in world.resources.values() for r in rs}

    models, weights, leases, transfers = [], [], [], 0
    end = now
    for k in sorted(selected):
        ct = by_id[k]
        down = links.transfer_time(HUB, ct.center, nbytes)
        if ct.center != HUB:
            transfers += 2
        free_at, rid, s = heapq.heappop(slots[ct.center])
        r = res[(ct.center, rid)]
        ct.selection_count += 1
        runtime = sample_runtime(ct, r, world.rng.child("runtime", ct.id, ct.selection_count).generator())
        start = max(free_at, now + down)
        heapq.heappush(slots[ct.center], (start + runtime, rid, s))
        leases.append(Lease(start=start, center=ct.center, planet=round_index, container=ct.id, resource=r.id,
                            runtime=runtime, price=r.price_for(ct.id), delta=0.0))
        trained = world.task.train(global_params, ct.id,
                                   world.rng.child("train", ct.id, ct.selection_count).generator())
        models.append(trained)
        weights.append(ct.shard_size)
        end = max(end, start + runtime + links.transfer_time(ct.center, HUB, nbytes))
    return weighted_mean(models, weights), end, leases, transfers


def run_fedavg(cfg: ExperimentConfig, progress: Callable[[float, float], None] | None = None,
               world: World | None = None) -> MetricsLog:
    world = world or build_world(cfg)
    task = world.task
    T = cfg.total_time
    log = MetricsLog(flags=algorithm_flags(cfg))
    all_ids = [ct.id for c in sorted(world.containers) for ct in world.containers[c]]
    m = max(1, int(round(cfg.algorithm.fedavg_fraction * len(all_ids))))
    nbytes = task.dim * BYTES_PER_PARAM

    g = task.init_params()
    history = [(0.0, g)]  # (time the model became current, model)
    now, rnd = 0.0, 0
    while now < T:
        rng = world.rng.child("fedavg-select", rnd).generator()
        chosen = sorted(rng.choice(all_ids, size=m, replace=False).tolist())
        new_g, end, leases, transfers = fedavg_round(g, chosen, world, now, rnd)
        for lease in leases:
            lease.end = min(lease.start + lease.runtime, T)
            lease.charged = max(0.0, lease.end - lease.start)
            lease.truncated = lease.start + lease.runtime > T
            log.add_cost(lease.center, lease.cost)
            log.leases.append(lease)
        if end > T:
            break
        log.messages += transfers
        log.bytes += transfers * nbytes
        log.transfers.append({"kind": "fedavg", "round": rnd, "send": now, "arrive": end,
                              "count": transfers, "bytes": transfers * nbytes})
        g, now, rnd = new_g, end, rnd + 1
        history.append((now, g))
        log.version_trace.append((now, 0, 0, rnd))

    # replay snapshots against the model current at each cadence instant
    times = list(np.arange(0.0, T, cfg.eval_interval)) + [T]
    cost_at = _cost_curve(log.leases)
    msg_at = [(h[0], i) for i, h in enumerate(history)]
    for t in times:
        t = float(t)
        idx = max(i for i, (ht, _) in enumerate(history) if ht <= t)
        acc, loss = task.evaluate(history[idx][1])
        done_rounds = sum(1 for ht, i in msg_at[1:] if ht <= t)
        msgs = sum(x["count"] for x in log.transfers[:done_rounds])
        log.snapshots.append(Snapshot(t, acc, loss, cost_at(t), msgs, msgs * nbytes))
        if progress is not None:
            progress(t, acc)
    log.final_params = np.array(g)
    log.rounds = rnd
    log.selection_counts = {ct.id: ct.selection_count for cts in world.containers.values() for ct in cts}
    return log


def _cost_curve(leases: Sequence[Lease]):
    """Cumulative cost of leases finished by time ``t``."""
    ends = sorted((lease.end, lease.cost) for lease in leases)

    def at(t: float) -> float:
        return math.fsum(c for e, c in ends if e <= t)

    return at
