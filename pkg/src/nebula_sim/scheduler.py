"""Reward-guided container selection and cost/time resource assignment."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ViolationError

PROB_EPS = 1e-6
PSC_EWMA = 0.5

SELECTION_MODES = ("nebula", "random")
RESOURCE_MODES = ("nebula", "random", "cost-only", "time-only")
TIME_FACTOR_MODES = ("literal", "intent")


@dataclass
class ContainerProfile:
    """A data owner's container.

    ``est_work`` is the compute one round needs on a unit-speed resource
    (shard size x epochs x per-sample cost). ``speed`` scales how fast this
    container runs relative to others on the same resource.
    """

    id: int
    center: int
    shard_size: int
    est_work: float
    speed: float = 1.0
    selection_count: int = 0
    runtime_history: dict[int, list[float]] = field(default_factory=dict)
    perf_score: float | None = None

    def psc(self) -> float:
        # cold start: predicted time on a unit-speed resource
        return self.est_work if self.perf_score is None else self.perf_score

    def rtime(self, resource: "ResourceSpec") -> float:
        hist = self.runtime_history.get(resource.id)
        if hist:
            return math.fsum(hist) / len(hist)
        return self.est_work / resource.speed_mean

    def record(self, resource: "ResourceSpec", duration: float) -> None:
        self.runtime_history.setdefault(resource.id, []).append(duration)
        normalized = duration * resource.speed_mean
        if self.perf_score is None:
            self.perf_score = normalized
        else:
            self.perf_score = PSC_EWMA * self.perf_score + (1 - PSC_EWMA) * normalized


@dataclass
class ResourceSpec:
    id: int
    center: int
    price: float | dict = 1.0
    speed_mean: float = 1.0
    speed_stddev: float = 0.0
    capacity: int = 1

    def price_for(self, container_id: int) -> float:
        if isinstance(self.price, dict):
            return float(self.price.get(container_id, self.price["default"]))
        return float(self.price)


def version_delta(v_p: float, v_center_avg: float, v_os: float) -> float:
    if v_p < 0:
        raise ViolationError("planet version must be >= 0")
    return v_p - v_center_avg - v_os


def perf_reward(score: float, delta: float, all_scores: Sequence[float]) -> float:
    """Performance reward of a container whose score (historical time) is ``score``.

    Ahead-of-average planets (``delta > 0``) favour slow containers and
    lagging planets favour fast ones.
    """
    if len(all_scores) == 0:
        raise ViolationError("performance scores must be non-empty")
    if any(not s > 0 for s in all_scores):
        raise ViolationError("performance scores must be positive")
    hi = max(all_scores)
    if delta > 0:
        return score / hi * delta
    return (1.0 - (min(all_scores) - score) / hi) * delta


def curiosity_reward(selection_count: int) -> float:
    if selection_count < 0:
        raise ViolationError("selection count must be >= 0")
    return 1.0 / math.sqrt(selection_count + 1)


def selection_probs(rewards: Sequence[float]) -> np.ndarray:
    """Turn arbitrary real rewards into a sampling distribution, preserving their order."""
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ViolationError("reward list must be non-empty")
    if not np.all(np.isfinite(r)):
        raise ViolationError(f"non-finite reward at index {int(np.flatnonzero(~np.isfinite(r))[0])}")
    shifted = r - r.min() + PROB_EPS
    return shifted / shifted.sum()


def container_rewards(
    planet_version: int,
    center_avg_version: float,
    version_offset: float,
    candidates: Sequence[ContainerProfile],
    all_containers: Sequence[ContainerProfile],
) -> tuple[float, list[float]]:
    delta = version_delta(planet_version, center_avg_version, version_offset)
    scores = [c.psc() for c in all_containers]
    rewards = [perf_reward(c.psc(), delta, scores) + curiosity_reward(c.selection_count) for c in candidates]
    return delta, rewards


def select_container(
    planet_version: int,
    center_avg_version: float,
    version_offset: float,
    idle: Sequence[ContainerProfile],
    all_containers: Sequence[ContainerProfile],
    rng: np.random.Generator,
    mode: str = "nebula",
) -> tuple[ContainerProfile, float]:
    """Sample an idle container for a ready planet; returns ``(container, delta)``.

    The caller increments ``selection_count`` once training actually starts.
    """
    if not idle:
        raise ViolationError("no idle container; queue the planet instead")
    if mode == "random":
        delta = version_delta(planet_version, center_avg_version, version_offset)
        return idle[int(rng.integers(len(idle)))], delta
    if mode != "nebula":
        raise ViolationError(f"unknown selection mode {mode!r}")
    delta, rewards = container_rewards(planet_version, center_avg_version, version_offset, idle, all_containers)
    if len(idle) == 1:
        return idle[0], delta
    p = selection_probs(rewards)
    return idle[int(rng.choice(len(idle), p=p))], delta


def _centered(values: Sequence[float]) -> list[float]:
    mean = math.fsum(values) / len(values)
    hi = max(values)
    return [(v - mean) / hi for v in values]


def cost_factor(r: ResourceSpec, ct: ContainerProfile, all_resources: Sequence[ResourceSpec]) -> float:
    if not all_resources:
        raise ViolationError("resource set must be non-empty")
    prices = [x.price_for(ct.id) for x in all_resources]
    if any(not p > 0 for p in prices):
        raise ViolationError("resource prices must be positive")
    mean = math.fsum(prices) / len(prices)
    return (r.price_for(ct.id) - mean) / max(prices)


def time_factor(
    r: ResourceSpec,
    ct: ContainerProfile,
    delta: float,
    all_resources: Sequence[ResourceSpec],
    mode: str = "intent",
) -> float:
    """Runtime factor of ``r`` for ``ct``.

    ``literal`` multiplies the normalized runtime by ``delta``; ``intent``
    multiplies by ``max(1 - delta, 0.1)`` so lagging planets weigh runtime most.
    """
    if not all_resources:
        raise ViolationError("resource set must be non-empty")
    times = [ct.rtime(x) for x in all_resources]
    mean = math.fsum(times) / len(times)
    nt = (ct.rtime(r) - mean) / max(times)
    if mode == "literal":
        return nt * delta
    if mode == "intent":
        return nt * max(1.0 - delta, 0.1)
    raise ViolationError(f"unknown time factor mode {mode!r}")


def assign_resource(
    ct: ContainerProfile,
    delta: float,
    available: Sequence[ResourceSpec],
    all_resources: Sequence[ResourceSpec],
    mode: str = "nebula",
    time_mode: str = "intent",
    rng: np.random.Generator | None = None,
) -> ResourceSpec:
    """Pick the available resource minimizing cost factor + time factor.

    Factors are normalized over the center's whole resource set. Ties go to
    the lowest resource id. ``random`` draws uniformly from ``available``.
    """
    if not available:
        raise ViolationError("no available resource")
    if mode == "random":
        if rng is None:
            raise ViolationError("random resource mode needs an rng")
        return available[int(rng.integers(len(available)))]
    if mode not in RESOURCE_MODES:
        raise ViolationError(f"unknown resource mode {mode!r}")
    use_cost = mode in ("nebula", "cost-only")
    use_time = mode in ("nebula", "time-only")
    best, best_key = None, None
    for r in available:
        value = 0.0
        if use_cost:
            value += cost_factor(r, ct, all_resources)
        if use_time:
            value += time_factor(r, ct, delta, all_resources, time_mode)
        key = (value, r.id)
        if best_key is None or key < best_key:
            best, best_key = r, key
    return best
