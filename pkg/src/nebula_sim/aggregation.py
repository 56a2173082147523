"""Planet update, master generation, global aggregation and the stellar decay weight."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .core import ModelParams, PlanetState, ViolationError, weighted_mean

DECAY_MIN = 0.5
DECAY_MAX = 1.0
VERSION_WEIGHT_FLOOR = 5.0

DECAY_SCHEDULES = ("linear", "exponential")


def decay_weight(elapsed: float, rotation_interval: float, schedule: str = "linear") -> float:
    """Weight of the stellar model, ``elapsed`` seconds after the last rotation.

    ``linear`` falls from 1.0 to 0.5 over one rotation interval and stays there.
    ``exponential`` approaches 0.5 with a half-life of one rotation interval.
    """
    if elapsed < 0:
        raise ViolationError(f"elapsed time must be >= 0, got {elapsed}")
    if not rotation_interval > 0:
        raise ViolationError(f"rotation interval must be > 0, got {rotation_interval}")
    frac = elapsed / rotation_interval
    if schedule == "linear":
        return DECAY_MAX - (DECAY_MAX - DECAY_MIN) * min(frac, 1.0)
    if schedule == "exponential":
        return DECAY_MIN + (DECAY_MAX - DECAY_MIN) * 2.0 ** (-frac)
    raise ViolationError(f"unknown decay schedule {schedule!r}")


@dataclass
class DecayState:
    rotation_interval: float
    last_reset_time: float = 0.0
    schedule: str = "linear"

    def value(self, now: float) -> float:
        return decay_weight(now - self.last_reset_time, self.rotation_interval, self.schedule)

    def reset(self, now: float) -> None:
        self.last_reset_time = now


def version_weight(v_j: float, v_s: float) -> float:
    return max(v_j - v_s, VERSION_WEIGHT_FLOOR)


def planet_update(m_j: ModelParams, m_s: ModelParams, v_j: int, v_s: float, d_t: float) -> ModelParams:
    """Blend a freshly trained planet with the stellar model.

    The planet weight is ``max(v_j - v_s, 5)`` and the stellar weight is the
    decay value ``d_t``.
    """
    if not DECAY_MIN <= d_t <= DECAY_MAX:
        raise ViolationError(f"decay weight {d_t} outside [{DECAY_MIN}, {DECAY_MAX}]")
    if v_j < 0 or v_s < 0:
        raise ViolationError("versions must be non-negative")
    return weighted_mean([m_j, m_s], [version_weight(v_j, v_s), d_t])


def _version_weighted(models: Sequence[ModelParams], versions: Sequence[float]) -> ModelParams:
    if len(models) == 0:
        raise ViolationError("cannot aggregate an empty model list")
    if any(v < 0 for v in versions):
        raise ViolationError("versions must be non-negative")
    if all(v == 0 for v in versions):
        # cold start: every planet is still the shared initialization
        return weighted_mean(models, [1.0] * len(models))
    return weighted_mean(models, versions)


def master_gen(planets: Sequence[PlanetState]) -> ModelParams:
    """Version-weighted mean of a center's planet models."""
    return _version_weighted([p.params for p in planets], [p.version for p in planets])


def global_aggregate(masters: Sequence[ModelParams], avg_versions: Sequence[float]) -> ModelParams:
    """Combine every center's master into the deployable global model."""
    if len(masters) != len(avg_versions):
        raise ViolationError(f"{len(masters)} masters but {len(avg_versions)} versions")
    return _version_weighted(masters, avg_versions)
