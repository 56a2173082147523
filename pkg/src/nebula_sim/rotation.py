"""Inter-DC model rotation: ring targets, timer condition, dispatch and stellar receipt."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .aggregation import master_gen
from .core import CenterState, ModelParams, ProtocolError, ViolationError

BYTES_PER_PARAM = 8


@dataclass(frozen=True)
class RotationMessage:
    source_center: int
    target_center: int
    master: ModelParams
    avg_version: float
    send_time: float
    round: int = 0

    @property
    def nbytes(self) -> int:
        return int(self.master.shape[0]) * BYTES_PER_PARAM


def rotation_target(i: int, r: int, n: int) -> int:
    """Center (1-based) that center ``i`` sends to in rotation round ``r``."""
    if n < 1:
        raise ViolationError(f"center count must be >= 1, got {n}")
    if not 1 <= i <= n:
        raise ViolationError(f"center id {i} outside 1..{n}")
    if r < 0:
        raise ViolationError(f"rotation round must be >= 0, got {r}")
    return (i + r) % n + 1


def is_self_round(r: int, n: int) -> bool:
    # (i + r) % n + 1 == i  <=>  r = -1 (mod n), for every i at once
    return (r + 1) % n == 0


def should_rotate(now: float, start: float, rotation_count: int, t_c: float) -> bool:
    return (now - start) > rotation_count * t_c


def dispatch(center: CenterState, now: float, n_centers: int) -> RotationMessage:
    """Build the master model for this round and advance the center's rotation state.

    Records the average planet version, bumps the rotation counter and resets
    the stellar decay weight.
    """
    master = master_gen(center.planets)
    avg = center.avg_version()
    r = center.rotation_count
    msg = RotationMessage(
        source_center=center.id,
        target_center=rotation_target(center.id, r, n_centers),
        master=master,
        avg_version=avg,
        send_time=now,
        round=r,
    )
    center.recorded_avg_version = avg
    center.rotation_count += 1
    if center.decay is not None:
        center.decay.reset(now)
    return msg


def apply_stellar(center: CenterState, msg: RotationMessage) -> CenterState:
    """Replace the stellar model with a received master and refresh the version offset.

    A message older than the last applied one is dropped: the input buffer
    keeps only the newest stellar update.
    """
    if msg.target_center != center.id:
        raise ProtocolError(
            f"message for center {msg.target_center} delivered to center {center.id}"
        )
    if msg.master.shape != center.stellar.shape:
        raise ViolationError("stellar and master dimensions differ")
    if msg.send_time < center.last_stellar_send_time:
        return center
    center.stellar = msg.master
    center.stellar_version = msg.avg_version
    center.version_offset = center.recorded_avg_version - center.stellar_version
    center.last_stellar_send_time = msg.send_time
    return center


class InterDcLinks:
    """Pairwise latency (s) and bandwidth (bytes/s) between centers.

    Transfers inside one center are free.
    """

    def __init__(self, latency: Sequence[Sequence[float]], bandwidth):
        self.latency = np.asarray(latency, dtype=float)
        n = self.latency.shape[0]
        if self.latency.shape != (n, n):
            raise ViolationError("latency matrix must be square")
        bw = np.asarray(bandwidth, dtype=float)
        self.bandwidth = np.full((n, n), float(bw)) if bw.ndim == 0 else bw
        if self.bandwidth.shape != (n, n):
            raise ViolationError("bandwidth must be a scalar or an n x n matrix")

    @property
    def n(self) -> int:
        return self.latency.shape[0]

    def transfer_time(self, source: int, target: int, nbytes: int) -> float:
        if source == target:
            return 0.0
        i, j = source - 1, target - 1
        return float(self.latency[i, j] + nbytes / self.bandwidth[i, j])
