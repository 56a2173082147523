"""Small config builders shared by the test modules."""

import copy


def resource(rid=1, price=1.0, speed=1.0, sd=0.0, cap=1):
    return {"id": rid, "price": price, "speed_mean": speed, "speed_stddev": sd, "capacity": cap}


def center(cid, containers=1, planets=1, resources=None, **extra):
    return {"id": cid, "containers": containers, "active_planets": planets,
            "resources": resources or [resource()], **extra}


def raw_config(n_centers=1, containers=1, planets=1, resources=None, **top):
    """A quadratic-task config; every field can be replaced through ``top``."""
    raw = {
        "seed": 0,
        "rotation_interval": 10.0,
        "total_time": 35.0,
        "eval_interval": 5.0,
        "algorithm": {"name": "nebula"},
        "data": {"kind": "quadratic", "dim": 3, "mu": 0.5, "L": 1.0, "noise": 0.0,
                 "samples_per_container": 10},
        "learner": {"learning_rate": 0.1, "momentum": 0.0, "batch_size": 10, "local_epochs": 1,
                    "per_sample_cost": 1.0},
        "inter_dc": {"latency": [[0.0 if i == j else 0.5 for j in range(n_centers)] for i in range(n_centers)],
                     "bandwidth": 1e6},
        "centers": [center(i + 1, containers, planets, copy.deepcopy(resources)) for i in range(n_centers)],
    }
    raw.update(top)
    return raw


def synthetic_raw(n_centers=2, containers=6, planets=2, **top):
    raw = raw_config(n_centers, containers, planets,
                     resources=[resource(1, 2.0, 4.0, 0.4, 2), resource(2, 1.0, 1.0, 0.1, 2)])
    raw["data"] = {"kind": "synthetic", "classes": 4, "dim": 5, "total": 600, "alpha": 0.5, "separation": 3.0}
    raw["learner"] = {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 20, "local_epochs": 2,
                      "per_sample_cost": 1.0}
    raw.update({"rotation_interval": 60.0, "total_time": 600.0, "eval_interval": 50.0, "targets": [0.5, 0.9]})
    raw.update(top)
    return raw
