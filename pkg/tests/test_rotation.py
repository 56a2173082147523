import dataclasses

import numpy as np
import pytest

from nebula_sim.aggregation import DecayState
from nebula_sim.core import CenterState, PlanetState, ProtocolError, ViolationError, as_params
from nebula_sim.rotation import (
    InterDcLinks,
    RotationMessage,
    apply_stellar,
    dispatch,
    is_self_round,
    rotation_target,
    should_rotate,
)


def center(cid=1, planets=((1.0, 2), (3.0, 2)), **kw):
    ps = [PlanetState(as_params([x]), v) for x, v in planets]
    return CenterState(id=cid, planets=ps, stellar=as_params([0.0]), decay=DecayState(100.0), **kw)


def test_rotation_target_examples():
    assert rotation_target(1, 0, 4) == 2
    assert rotation_target(4, 0, 4) == 1


@pytest.mark.parametrize("n", range(1, 17))
def test_round_minus_one_is_self_round(n):
    assert all(rotation_target(i, n - 1, n) == i for i in range(1, n + 1))
    assert is_self_round(n - 1, n)


def test_rotation_target_bijection_by_enumeration():
    for n in range(1, 17):
        for r in range(4 * n):
            targets = [rotation_target(i, r, n) for i in range(1, n + 1)]
            assert sorted(targets) == list(range(1, n + 1))
            assert is_self_round(r, n) == (targets == list(range(1, n + 1)))


def test_rotation_target_violations():
    for args in [(0, 0, 3), (4, 0, 3), (1, -1, 3), (1, 0, 0)]:
        with pytest.raises(ViolationError):
            rotation_target(*args)


@pytest.mark.parametrize("now, count, expected", [(100, 0, True), (100, 2, False), (151, 3, True)])
def test_should_rotate(now, count, expected):
    assert should_rotate(now, 0, count, 50) is expected


def test_dispatch_builds_master_and_updates_state():
    c = center()
    c.decay.last_reset_time = -50
    msg = dispatch(c, now=10.0, n_centers=4)
    np.testing.assert_allclose(msg.master, [2.0])
    assert msg.avg_version == 2.0
    assert msg.target_center == 2 and msg.round == 0
    assert c.rotation_count == 1
    assert c.recorded_avg_version == 2.0
    assert c.decay.value(10.0) == 1.0
    assert msg.nbytes == 8


def test_dispatch_single_planet_identity():
    c = center(planets=((7.5, 3),))
    np.testing.assert_array_equal(dispatch(c, 0.0, 2).master, [7.5])


def test_apply_stellar_offset():
    c = center(cid=2)
    c.recorded_avg_version = 6
    apply_stellar(c, RotationMessage(1, 2, as_params([9.0]), 4.0, send_time=3.0))
    assert c.version_offset == 2
    assert c.stellar_version == 4.0
    np.testing.assert_array_equal(c.stellar, [9.0])
    apply_stellar(c, RotationMessage(3, 2, as_params([1.0]), 6.0, send_time=4.0))
    assert c.version_offset == 0


def test_self_round_consistency():
    c = center(cid=3)
    c.rotation_count = 2  # (3 + 2) % 3 + 1 == 3
    msg = dispatch(c, 5.0, 3)
    assert msg.target_center == 3
    apply_stellar(c, msg)
    np.testing.assert_array_equal(c.stellar, msg.master)
    assert c.version_offset == 0


def test_misrouted_message():
    with pytest.raises(ProtocolError):
        apply_stellar(center(cid=1), RotationMessage(2, 3, as_params([1.0]), 1.0, 0.0))


def test_newest_message_wins():
    c = center(cid=1)
    apply_stellar(c, RotationMessage(2, 1, as_params([5.0]), 3.0, send_time=20.0))
    apply_stellar(c, RotationMessage(3, 1, as_params([1.0]), 1.0, send_time=10.0))
    np.testing.assert_array_equal(c.stellar, [5.0])


def test_coverage_over_n_rounds():
    for n in range(1, 17):
        for start in range(2 * n):
            for i in range(1, n + 1):
                seen = [rotation_target(i, r, n) for r in range(start, start + n)]
                assert sorted(seen) == list(range(1, n + 1))
                assert seen.count(i) == 1


def test_one_send_per_center_per_round_vs_two_for_aggregation():
    for n in range(2, 9):
        for r in range(3 * n):
            sends = sum(1 for i in range(1, n + 1) if rotation_target(i, r, n) != i)
            assert sends == (0 if is_self_round(r, n) else n)
            assert sends <= 0.5 * (2 * n)


def test_links_transfer_time():
    links = InterDcLinks([[0, 0.5], [0.25, 0]], [[1, 100.0], [200.0, 1]])
    assert links.transfer_time(1, 1, 800) == 0.0
    assert links.transfer_time(1, 2, 800) == pytest.approx(0.5 + 8.0)
    assert links.transfer_time(2, 1, 800) == pytest.approx(0.25 + 4.0)
    with pytest.raises(ViolationError):
        InterDcLinks([[0, 1]], 1.0)


def test_message_is_immutable():
    m = RotationMessage(1, 2, as_params([1.0]), 1.0, 0.0)
    with pytest.raises(dataclasses.FrozenInstanceError):
        m.avg_version = 3.0
