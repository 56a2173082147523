"""Discrete-event simulator for multi-center asynchronous federated training.

All activity is driven by a virtual clock. Three event families stand in for
the concurrent loops of the protocol: training completions (planet update and
re-scheduling), per-center rotation timers (master dispatch) and message
arrivals (stellar replacement). Simultaneous events pop in insertion order,
and every random draw is keyed by the identity and counters of the actor that
makes it, so a run is a pure function of its configuration.
"""

from __future__ import annotations

import dataclasses
import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .aggregation import DecayState, global_aggregate, master_gen, planet_update
from .config import ExperimentConfig
from .core import CenterState, PlanetState, RngStream, ViolationError
from .learner import (
    QuadTask,
    SgdHyper,
    SoftmaxTask,
    dirichlet_partition,
    grouped_dirichlet_partition,
    gen_synthetic,
    load_matrix,
    random_quad_problem,
    split_train_test,
)
from .rotation import InterDcLinks, apply_stellar, dispatch, should_rotate
from .scheduler import ContainerProfile, ResourceSpec, assign_resource, select_container

MIN_SPEED_FRACTION = 0.1

TRAINING_COMPLETE = "training_complete"
ROTATION_TIMER = "rotation_timer"
MESSAGE_ARRIVAL = "message_arrival"
UPLOAD_ARRIVAL = "upload_arrival"
SNAPSHOT = "snapshot"
END_OF_RUN = "end_of_run"


@dataclass(order=True)
class SimEvent:
    time: float
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)


class EventQueue:
    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0.0

    def push(self, time: float, kind: str, **payload) -> SimEvent:
        if time < self.now:
            raise ViolationError(f"event {kind} scheduled in the past ({time} < {self.now})")
        ev = SimEvent(time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def __len__(self):
        return len(self._heap)


@dataclass
class Lease:
    start: float
    center: int
    planet: int
    container: int
    resource: int
    runtime: float
    price: float
    delta: float
    end: float | None = None
    charged: float = 0.0
    truncated: bool = False

    @property
    def cost(self) -> float:
        return self.price * self.charged


@dataclass
class Snapshot:
    time: float
    accuracy: float
    loss: float
    cum_cost: float
    msgs: int
    bytes: int


@dataclass
class MetricsLog:
    flags: dict
    snapshots: list[Snapshot] = field(default_factory=list)
    center_cost: dict[int, float] = field(default_factory=dict)
    messages: int = 0
    bytes: int = 0
    version_trace: list[tuple] = field(default_factory=list)
    selection_counts: dict[int, int] = field(default_factory=dict)
    leases: list[Lease] = field(default_factory=list)
    transfers: list[dict] = field(default_factory=list)
    rotations: list[dict] = field(default_factory=list)
    queued: int = 0
    final_versions: dict[int, list[int]] = field(default_factory=dict)
    final_params: np.ndarray | None = None
    rounds: int = 0

    @property
    def total_cost(self) -> float:
        return math.fsum(self.center_cost.values())

    def add_cost(self, center: int, amount: float) -> None:
        self.center_cost[center] = self.center_cost.get(center, 0.0) + amount

    def to_dict(self) -> dict:
        return {
            "flags": self.flags,
            "snapshots": [dataclasses.asdict(s) for s in self.snapshots],
            "center_cost": {str(k): v for k, v in sorted(self.center_cost.items())},
            "messages": self.messages,
            "bytes": self.bytes,
            "version_trace": [list(v) for v in self.version_trace],
            "selection_counts": {str(k): v for k, v in sorted(self.selection_counts.items())},
            "leases": [dataclasses.asdict(x) for x in self.leases],
            "transfers": self.transfers,
            "rotations": self.rotations,
            "queued": self.queued,
            "final_versions": {str(k): v for k, v in sorted(self.final_versions.items())},
            "rounds": self.rounds,
            "final_params": None if self.final_params is None else self.final_params.tolist(),
        }


# ---------------------------------------------------------------- world construction


@dataclass
class World:
    task: object
    containers: dict[int, list[ContainerProfile]]
    resources: dict[int, list[ResourceSpec]]
    links: InterDcLinks
    rng: RngStream
    hyper: SgdHyper


def build_task(cfg: ExperimentConfig, rng: RngStream, n_containers: int):
    d, lc = cfg.data, cfg.learner
    hyper = SgdHyper(lc.learning_rate, lc.momentum, lc.batch_size, lc.local_epochs)
    if d.kind == "quadratic":
        center = d.optimum_scale * rng.child("quad-center").generator().standard_normal(d.dim)
        problems = [random_quad_problem(d.dim, d.mu, d.L, d.noise, rng.child("quad", k).generator(), d.b_scale,
                                        center=center)
                    for k in range(n_containers)]
        return QuadTask(problems, [d.samples_per_container] * n_containers, hyper,
                        lr_schedule=d.lr_schedule, mu=d.mu, L=d.L)
    if d.kind == "file":
        full = load_matrix(d.path, d.classes if d.classes else None)
        if d.test_path:
            train, test = full, load_matrix(d.test_path, full.classes)
        else:
            train, test = split_train_test(full, d.test_fraction, rng.child("split").generator())
    else:
        full = gen_synthetic(d.classes, d.dim, d.total, d.separation, rng.child("data").generator())
        train, test = split_train_test(full, d.test_fraction, rng.child("split").generator())
    part_rng = rng.child("partition").generator()
    if d.center_alpha is None:
        parts = dirichlet_partition(train, n_containers, d.alpha, part_rng)
    else:
        parts = grouped_dirichlet_partition(train, [c.containers for c in cfg.centers], d.center_alpha, d.alpha,
                                            part_rng)
    return SoftmaxTask([train.subset(p) for p in parts], test, hyper)


def build_world(cfg: ExperimentConfig) -> World:
    rng = RngStream(cfg.seed)
    n_ct = cfg.total_containers
    task = build_task(cfg, rng, n_ct)
    containers, resources = {}, {}
    k = 0
    for c in cfg.centers:
        profiles = []
        for speed in c.speeds():
            work = task.shard_size(k) * cfg.learner.local_epochs * cfg.learner.per_sample_cost
            profiles.append(ContainerProfile(id=k, center=c.id, shard_size=task.shard_size(k),
                                             est_work=work, speed=float(speed)))
            k += 1
        containers[c.id] = profiles
        resources[c.id] = [
            ResourceSpec(id=r.id, center=c.id, price=r.price, speed_mean=float(r.speed_mean),
                         speed_stddev=float(r.speed_stddev), capacity=int(r.capacity))
            for r in sorted(c.resources, key=lambda r: r.id)
        ]
    links = InterDcLinks(cfg.inter_dc.latency, cfg.inter_dc.bandwidth)
    return World(task, containers, resources, links, rng, task.hyper)


def sample_runtime(ct: ContainerProfile, r: ResourceSpec, rng: np.random.Generator) -> float:
    """Training time of one round of ``ct`` on ``r``.

    Resource throughput is drawn from ``Normal(speed_mean, speed_stddev)``
    and clamped below at a tenth of the mean, so durations stay positive.
    """
    draw = r.speed_mean if r.speed_stddev == 0 else rng.normal(r.speed_mean, r.speed_stddev)
    draw = max(draw, MIN_SPEED_FRACTION * r.speed_mean)
    return ct.est_work / (draw * ct.speed)


def algorithm_flags(cfg: ExperimentConfig) -> dict:
    a = cfg.algorithm
    return {"algorithm": a.name, "selection": a.selection, "resource": a.resource,
            "time_factor_mode": a.time_factor_mode, "decay": a.decay, "seed": cfg.seed}


# ---------------------------------------------------------------- simulator


class NebulaSimulator:
    """Event loop for the rotation protocol and its synchronous-aggregation ablation."""

    def __init__(self, cfg: ExperimentConfig, progress: Callable[[float, float], None] | None = None,
                 strict: bool = False, world: World | None = None):
        if cfg.algorithm.name not in ("nebula", "nebula-aggr"):
            raise ViolationError(f"NebulaSimulator cannot run {cfg.algorithm.name!r}")
        self.cfg = cfg
        self.progress = progress
        self.strict = strict
        self.world = world or build_world(cfg)
        self.task = self.world.task
        self.n = len(cfg.centers)
        self.T = cfg.total_time
        self.t_c = cfg.rotation_interval
        self.aggr = cfg.algorithm.name == "nebula-aggr"
        self.hub = 1
        self.events = EventQueue()
        self.log = MetricsLog(flags=algorithm_flags(cfg))

        m0 = self.task.init_params()
        self.centers: dict[int, CenterState] = {}
        for c in cfg.centers:
            self.centers[c.id] = CenterState(
                id=c.id,
                planets=[PlanetState(m0, 0) for _ in range(c.active_planets)],
                stellar=m0,
                decay=DecayState(self.t_c, 0.0, cfg.algorithm.decay),
            )
        self.overhead = {c.id: c.intra_dc_overhead for c in cfg.centers}
        self.planet_iters = {c.id: [0] * c.active_planets for c in cfg.centers}
        self.training = {c.id: [False] * c.active_planets for c in cfg.centers}
        self.busy: set[int] = set()
        self.active = {(c, r.id): 0 for c, rs in self.world.resources.items() for r in rs}
        self.queues = {c.id: deque() for c in cfg.centers}
        self.inflight: dict[int, Lease] = {}
        self.uploads: dict[int, dict[int, object]] = {}

    # -- helpers

    def global_model(self):
        cs = [self.centers[i] for i in sorted(self.centers)]
        return global_aggregate([master_gen(c.planets) for c in cs], [c.avg_version() for c in cs])

    def _record_transfer(self, msg, kind: str, arrive: float):
        self.log.messages += 1
        self.log.bytes += msg.nbytes
        self.log.transfers.append({"kind": kind, "round": msg.round, "source": msg.source_center,
                                   "target": msg.target_center, "send": msg.send_time,
                                   "arrive": arrive, "bytes": msg.nbytes})

    def _deliver(self, msg, now: float, kind: str):
        arrive = now + self.world.links.transfer_time(msg.source_center, msg.target_center, msg.nbytes)
        self._record_transfer(msg, kind, arrive)
        event = UPLOAD_ARRIVAL if kind == "upload" else MESSAGE_ARRIVAL
        if arrive == now:
            self._handle(SimEvent(now, -1, event, {"msg": msg}))
        else:
            self.events.push(arrive, event, msg=msg)

    def _next_timer(self, center: CenterState):
        t = math.nextafter(center.rotation_count * self.t_c, math.inf)
        if t < self.T:
            self.events.push(t, ROTATION_TIMER, center=center.id)

    # -- scheduling

    def _ready(self, c: int, j: int, now: float):
        self.queues[c].append(j)
        self._drain(c, now)

    def _drain(self, c: int, now: float):
        queue = self.queues[c]
        while queue:
            idle = [ct for ct in self.world.containers[c] if ct.id not in self.busy]
            avail = [r for r in self.world.resources[c] if self.active[(c, r.id)] < r.capacity]
            if not idle or not avail:
                self.log.queued += 1
                return
            self._start(c, queue.popleft(), idle, avail, now)

    def _start(self, c: int, j: int, idle, avail, now: float):
        center = self.centers[c]
        planet = center.planets[j]
        algo = self.cfg.algorithm
        rng = self.world.rng
        ct, delta = select_container(
            planet.version, center.avg_version(), center.version_offset, idle,
            self.world.containers[c], rng.child("select", c, j, planet.version).generator(), algo.selection,
        )
        r = assign_resource(ct, delta, avail, self.world.resources[c], algo.resource, algo.time_factor_mode,
                            rng=rng.child("resource", c, j, planet.version).generator())
        ct.selection_count += 1
        runtime = sample_runtime(ct, r, rng.child("runtime", ct.id, ct.selection_count).generator())
        trained = self.task.train(planet.params, ct.id, rng.child("train", ct.id, ct.selection_count).generator(),
                                  start_iter=self.planet_iters[c][j])
        lease = Lease(start=now, center=c, planet=j, container=ct.id, resource=r.id, runtime=runtime,
                      price=r.price_for(ct.id), delta=delta)
        self.log.leases.append(lease)
        self.inflight[ct.id] = lease
        self.busy.add(ct.id)
        self.active[(c, r.id)] += 1
        self.training[c][j] = True
        self.events.push(now + runtime + self.overhead[c], TRAINING_COMPLETE,
                         center=c, planet=j, container=ct, resource=r, trained=trained, lease=lease)

    # -- event handlers

    def _on_training_complete(self, now, center, planet, container, resource, trained, lease):
        c, j, ct, r = center, planet, container, resource
        self.busy.discard(ct.id)
        self.active[(c, r.id)] -= 1
        self.inflight.pop(ct.id)
        lease.end = now
        lease.charged = lease.runtime
        self.log.add_cost(c, lease.cost)
        ct.record(r, lease.runtime)

        cs = self.centers[c]
        p = cs.planets[j]
        d_t = cs.decay.value(now)
        p.params = planet_update(trained, cs.stellar, p.version, cs.stellar_version, d_t)
        p.version += 1
        self.planet_iters[c][j] += self.task.iterations(ct.id)
        self.training[c][j] = False
        self.log.version_trace.append((now, c, j, p.version))
        self._ready(c, j, now)

    def _on_rotation_timer(self, now, center):
        cs = self.centers[center]
        assert should_rotate(now, 0.0, cs.rotation_count, self.t_c)
        msg = dispatch(cs, now, self.n)
        if self.aggr:
            msg = dataclasses.replace(msg, target_center=self.hub)
            self.log.rotations.append({"time": now, "center": center, "round": msg.round,
                                       "target": self.hub, "self": False})
            self._deliver(msg, now, "upload")
        else:
            is_self = msg.target_center == center
            self.log.rotations.append({"time": now, "center": center, "round": msg.round,
                                       "target": msg.target_center, "self": is_self})
            if is_self:
                apply_stellar(cs, msg)
            else:
                self._deliver(msg, now, "rotation")
        self._next_timer(cs)

    def _on_upload_arrival(self, now, msg):
        got = self.uploads.setdefault(msg.round, {})
        got[msg.source_center] = msg
        if len(got) < self.n:
            return
        del self.uploads[msg.round]
        ordered = [got[i] for i in sorted(got)]
        shared = global_aggregate([m.master for m in ordered], [m.avg_version for m in ordered])
        version = math.fsum(m.avg_version for m in ordered) / self.n
        for i in sorted(self.centers):
            out = dataclasses.replace(ordered[0], source_center=self.hub, target_center=i,
                                      master=shared, avg_version=version, send_time=now)
            self._deliver(out, now, "broadcast")

    def _on_message_arrival(self, now, msg):
        apply_stellar(self.centers[msg.target_center], msg)

    def _on_snapshot(self, now):
        self._snapshot(now)
        nxt = now + self.cfg.eval_interval
        if nxt < self.T:
            self.events.push(nxt, SNAPSHOT)

    def _snapshot(self, now):
        acc, loss = self.task.evaluate(self.global_model())
        self.log.snapshots.append(Snapshot(now, acc, loss, self.log.total_cost, self.log.messages, self.log.bytes))
        if self.progress is not None:
            self.progress(now, acc)

    def _handle(self, ev: SimEvent):
        handler = {
            TRAINING_COMPLETE: self._on_training_complete,
            ROTATION_TIMER: self._on_rotation_timer,
            MESSAGE_ARRIVAL: self._on_message_arrival,
            UPLOAD_ARRIVAL: self._on_upload_arrival,
            SNAPSHOT: self._on_snapshot,
        }[ev.kind]
        handler(ev.time, **ev.payload)

    def check_invariants(self):
        for (c, rid), n in self.active.items():
            cap = next(r.capacity for r in self.world.resources[c] if r.id == rid)
            assert 0 <= n <= cap, f"resource {rid} in center {c} over capacity"
        for c, flags in self.training.items():
            queued = set(self.queues[c])
            assert len(queued) == len(self.queues[c]), "planet queued twice"
            for j, busy in enumerate(flags):
                assert busy != (j in queued), f"planet {j} of center {c} both idle and training"
        trainers = [lease.container for lease in self.inflight.values()]
        assert len(trainers) == len(set(trainers))

    def _finish(self):
        T = self.T
        for lease in self.inflight.values():
            lease.charged = min(lease.runtime, T - lease.start)
            lease.end = T
            lease.truncated = True
            self.log.add_cost(lease.center, lease.cost)
        self.inflight.clear()
        self._snapshot(T)
        self.log.final_params = np.array(self.global_model())
        self.log.final_versions = {i: [p.version for p in c.planets] for i, c in self.centers.items()}
        self.log.selection_counts = {ct.id: ct.selection_count
                                     for cts in self.world.containers.values() for ct in cts}
        self.log.rounds = max((c.rotation_count for c in self.centers.values()), default=0)

    def run(self) -> MetricsLog:
        self.events.push(self.T, END_OF_RUN)
        if 0 < self.T:
            self.events.push(0.0, SNAPSHOT)
        for c in sorted(self.centers):
            self._next_timer(self.centers[c])
        for c in sorted(self.centers):
            for j in range(len(self.centers[c].planets)):
                self._ready(c, j, 0.0)
        while self.events:
            ev = self.events.pop()
            if ev.kind == END_OF_RUN:
                break
            self._handle(ev)
            if self.strict:
                self.check_invariants()
        self._finish()
        return self.log


def run(cfg: ExperimentConfig, progress: Callable[[float, float], None] | None = None,
        strict: bool = False) -> MetricsLog:
    """Simulate one experiment and return its metrics."""
    if cfg.algorithm.name == "fedavg":
        from .baselines import run_fedavg

        return run_fedavg(cfg, progress=progress)
    return NebulaSimulator(cfg, progress=progress, strict=strict).run()
