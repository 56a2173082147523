"""Shared domain types, seeded random streams and the weighted-mean primitive.

Model parameters are plain 1-D ``float64`` numpy arrays. ``as_params`` is the
single gate that validates and freezes them; everything downstream treats the
arrays as immutable values.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ModelParams = np.ndarray


class ViolationError(ValueError):
    """A precondition of an operation was not met."""


class ProtocolError(RuntimeError):
    """A message reached a center it was not addressed to."""


def as_params(values) -> ModelParams:
    """Return a read-only float64 copy of ``values`` after checking it is a finite vector."""
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ViolationError("model parameters must have positive dimension")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ViolationError(f"non-finite parameter at entry {bad}")
    arr.setflags(write=False)
    return arr


@dataclass
class PlanetState:
    params: ModelParams
    version: int = 0


@dataclass
class CenterState:
    """One data center as seen by the protocol layer.

    ``decay`` is an :class:`~nebula_sim.aggregation.DecayState`; it is typed
    loosely here to keep ``core`` free of imports from higher layers.
    """

    id: int
    planets: list[PlanetState]
    stellar: ModelParams
    stellar_version: float = 0.0
    rotation_count: int = 0
    recorded_avg_version: float = 0.0
    version_offset: float = 0.0
    decay: object = None
    last_stellar_send_time: float = -math.inf

    def __post_init__(self):
        if not self.planets:
            raise ViolationError(f"center {self.id} needs at least one planet")

    def avg_version(self) -> float:
        return math.fsum(p.version for p in self.planets) / len(self.planets)


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ViolationError("stream keys must be non-negative")
        return int(key)
    if isinstance(key, str):
        # crc32 is stable across platforms and interpreter runs, unlike hash()
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported stream key {key!r}")


@dataclass(frozen=True)
class RngStream:
    """A named, splittable random stream.

    Identical ``(seed, keys)`` always give the same generator, so each
    simulation actor can derive draws from its own identity and counters
    rather than from a shared sequential state.

    >>> a = RngStream(7).child("container", 3).generator().random()
    >>> b = RngStream(7).child("container", 3).generator().random()
    >>> a == b
    True
    """

    seed: int
    keys: tuple[int, ...] = field(default=())

    def child(self, *keys) -> "RngStream":
        return RngStream(self.seed, self.keys + tuple(_key_to_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.keys)
        return np.random.Generator(np.random.PCG64(ss))


def weighted_mean(models: Sequence[ModelParams], weights: Sequence[float]) -> ModelParams:
    """Entrywise ``sum(w_k * m_k) / sum(w_k)``.

    Terms are accumulated in list order with Neumaier compensation, so
    reordering the inputs changes the result only at the rounding level.
    """
    if len(models) == 0:
        raise ViolationError("weighted_mean: empty model list")
    if len(models) != len(weights):
        raise ViolationError(
            f"weighted_mean: {len(models)} models but {len(weights)} weights"
        )
    ws = []
    for k, w in enumerate(weights):
        w = float(w)
        if not math.isfinite(w):
            raise ViolationError(f"weighted_mean: non-finite weight at index {k}")
        if w < 0:
            raise ViolationError(f"weighted_mean: negative weight at index {k}")
        ws.append(w)
    dim = np.shape(models[0])[0]
    for k, m in enumerate(models):
        if np.ndim(m) != 1 or np.shape(m)[0] != dim:
            raise ViolationError(
                f"weighted_mean: model at index {k} has shape {np.shape(m)}, expected ({dim},)"
            )
    total = math.fsum(ws)
    if total <= 0.0:
        raise ViolationError("weighted_mean: all weights are zero")
    live = [k for k, w in enumerate(ws) if w > 0.0]
    if len(live) == 1:
        # w * m / w can be off by an ulp; a lone contributor is returned as is
        out = np.array(models[live[0]], dtype=np.float64)
        out.setflags(write=False)
        return out

    acc = np.zeros(dim)
    comp = np.zeros(dim)
    for m, w in zip(models, ws):
        term = w * np.asarray(m, dtype=np.float64)
        t = acc + term
        big = np.abs(acc) >= np.abs(term)
        comp += np.where(big, (acc - t) + term, (term - t) + acc)
        acc = t
    out = (acc + comp) / total
    out.setflags(write=False)
    return out
