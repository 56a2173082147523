from collections import defaultdict

import numpy as np
import pytest

from helpers import raw_config, resource, synthetic_raw
from nebula_sim.aggregation import DecayState
from nebula_sim.baselines import aggr_rotation_step, aggr_transfers_per_step, fedavg_round
from nebula_sim.config import apply_variant, build_config
from nebula_sim.core import CenterState, PlanetState, ViolationError, as_params
from nebula_sim.engine import build_world, run


def mk_center(cid, value, version):
    return CenterState(id=cid, planets=[PlanetState(as_params(value), version)], stellar=as_params([0.0] * len(value)),
                       decay=DecayState(10.0))


def test_aggr_step_weighted_mean():
    cs = aggr_rotation_step([mk_center(1, [0.0], 1), mk_center(2, [10.0], 4)], now=3.0)
    for c in cs:
        assert c.stellar[0] == pytest.approx(8.0)
        assert c.rotation_count == 1
    assert aggr_transfers_per_step(2) == 4


def test_aggr_step_fixed_point():
    cs = aggr_rotation_step([mk_center(i, [1.5, -2.0], i) for i in (1, 2, 3)])
    for c in cs:
        np.testing.assert_allclose(c.stellar, [1.5, -2.0], atol=1e-15)


def _fedavg_world(**kw):
    raw = raw_config(n_centers=2, containers=2, resources=[resource(1, 1.0, 1.0, 0.2, 4)], **kw)
    raw["inter_dc"]["latency"] = [[0.0, 0.0], [0.0, 0.0]]
    raw["algorithm"] = {"name": "fedavg", "fedavg_fraction": 1.0}
    return build_world(build_config(raw))


def test_fedavg_singleton_is_trained_model():
    w = _fedavg_world()
    g0 = w.task.init_params()
    new, end, leases, transfers = fedavg_round(g0, [2], w, 0.0, 0)
    expected = w.task.train(g0, 2, w.rng.child("train", 2, 1).generator())
    np.testing.assert_array_equal(new, expected)
    assert transfers == 2  # container 2 lives in center 2, across the hub boundary


def test_fedavg_equal_shards_plain_mean_and_straggler_bound():
    w = _fedavg_world()
    g0 = w.task.init_params()
    new, end, leases, transfers = fedavg_round(g0, [0, 1, 2, 3], w, 0.0, 0)
    trained = [w.task.train(g0, k, w.rng.child("train", k, 1).generator()) for k in range(4)]
    np.testing.assert_allclose(new, np.mean(trained, axis=0), atol=1e-14)
    assert end == max(x.runtime for x in leases)
    assert transfers == 4


def test_fedavg_needs_selection():
    w = _fedavg_world()
    with pytest.raises(ViolationError):
        fedavg_round(w.task.init_params(), [], w, 0.0, 0)


def test_fedavg_loss_non_increasing_iid_full_participation():
    raw = synthetic_raw(containers=4)
    raw["data"].update({"alpha": 1e6, "separation": 4.0})
    raw["learner"].update({"momentum": 0.0, "learning_rate": 0.05})
    for c in raw["centers"]:
        for r in c["resources"]:
            r["speed_stddev"] = 0.0
            r["capacity"] = 4
    raw["algorithm"] = {"name": "fedavg", "fedavg_fraction": 1.0}
    raw.update({"total_time": 1e9, "eval_interval": 1e9})
    cfg = build_config(raw)
    w = build_world(cfg)
    g = w.task.init_params()
    losses = [w.task.evaluate(g)[1]]
    now = 0.0
    for rnd in range(10):
        g, now, _, _ = fedavg_round(g, list(range(8)), w, now, rnd)
        losses.append(w.task.evaluate(g)[1])
    assert all(a >= b for a, b in zip(losses, losses[1:]))


def test_run_fedavg_budget_and_accounting():
    raw = apply_variant(synthetic_raw(), "fedavg")
    log = run(build_config(raw))
    assert log.rounds > 0
    assert log.snapshots[-1].time == 600.0
    assert log.transfers[-1]["arrive"] <= 600.0
    assert log.messages == sum(t["count"] for t in log.transfers)
    assert log.total_cost == pytest.approx(sum(x.cost for x in log.leases))


def test_aggr_and_nebula_transfer_counts_per_round():
    raw = synthetic_raw(n_centers=3)
    raw["inter_dc"]["latency"] = [[0.0 if i == j else 0.2 for j in range(3)] for i in range(3)]
    neb = run(build_config(apply_variant(raw, "nebula")))
    agg = run(build_config(apply_variant(raw, "nebula-aggr")))
    assert neb.rounds == agg.rounds > 3
    n_rounds = defaultdict(int)
    for t in neb.transfers:
        n_rounds[t["round"]] += 1
    a_rounds = defaultdict(int)
    for t in agg.transfers:
        a_rounds[t["round"]] += 1
    for r in range(neb.rounds):
        expected = 0 if (r + 1) % 3 == 0 else 3
        assert n_rounds.get(r, 0) == expected
        assert a_rounds[r] == 6


def test_single_center_aggr_matches_nebula():
    raw = synthetic_raw(n_centers=1)
    a = run(build_config(apply_variant(raw, "nebula"))).to_dict()
    b = run(build_config(apply_variant(raw, "nebula-aggr"))).to_dict()
    for key in ("leases", "version_trace", "final_params", "center_cost"):
        assert a[key] == b[key]
    # message counters differ by design: the aggregation step always books 2 per center
    strip = [{k: v for k, v in s.items() if k not in ("msgs", "bytes")} for s in a["snapshots"]]
    assert strip == [{k: v for k, v in s.items() if k not in ("msgs", "bytes")} for s in b["snapshots"]]
