"""Experiment configuration: YAML/JSON parsing, overrides and validation.

Validation collects every problem in one pass. Each message carries the
dotted key path and, when the value came from a file, ``file:line``.
"""

from __future__ import annotations

import copy
import re
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .aggregation import DECAY_SCHEDULES
from .scheduler import RESOURCE_MODES, SELECTION_MODES, TIME_FACTOR_MODES

ALGORITHMS = ("nebula", "fedavg", "nebula-aggr")


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e6``-style exponents as floats (YAML 1.1 wants ``1.0e+6``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                    |[-+]?\.(?:inf|Inf|INF)
                    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)
DATA_KINDS = ("synthetic", "quadratic", "file")

# named scheduler ablations
VARIANT_PRESETS = {
    "nebula": {"name": "nebula", "selection": "nebula", "resource": "nebula"},
    "fedavg": {"name": "fedavg"},
    "nebula-aggr": {"name": "nebula-aggr", "selection": "nebula", "resource": "nebula"},
    "random": {"name": "nebula", "selection": "random", "resource": "random"},
    "w-rr": {"name": "nebula", "selection": "nebula", "resource": "random"},
    "w-rc": {"name": "nebula", "selection": "random", "resource": "nebula"},
    "wo-c": {"name": "nebula", "selection": "nebula", "resource": "time-only"},
    "wo-t": {"name": "nebula", "selection": "nebula", "resource": "cost-only"},
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class ResourceConfig:
    id: int
    price: Any = 1.0
    speed_mean: float = 100.0
    speed_stddev: float = 0.0
    capacity: int = 1


@dataclass
class CenterConfig:
    id: int
    containers: int
    active_planets: int
    resources: list[ResourceConfig]
    container_speeds: list[float] | None = None
    intra_dc_overhead: float = 0.0

    def speeds(self) -> list[float]:
        return list(self.container_speeds) if self.container_speeds else [1.0] * self.containers


@dataclass
class InterDcConfig:
    latency: list[list[float]]
    bandwidth: Any = 1.25e8


@dataclass
class AlgorithmConfig:
    name: str = "nebula"
    selection: str = "nebula"
    resource: str = "nebula"
    time_factor_mode: str = "intent"
    decay: str = "linear"
    fedavg_fraction: float = 1.0


@dataclass
class DataConfig:
    kind: str = "synthetic"
    classes: int = 10
    dim: int = 20
    total: int = 4000
    test_fraction: float = 0.2
    separation: float = 3.0
    alpha: float = 0.5
    center_alpha: float | None = None
    path: str | None = None
    test_path: str | None = None
    mu: float = 0.1
    L: float = 1.0
    noise: float = 0.01
    b_scale: float = 1.0
    optimum_scale: float = 0.0
    samples_per_container: int = 50
    lr_schedule: str = "constant"


@dataclass
class LearnerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 50
    local_epochs: int = 5
    per_sample_cost: float = 1.0


@dataclass
class ExperimentConfig:
    seed: int
    centers: list[CenterConfig]
    inter_dc: InterDcConfig
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    rotation_interval: float = 1000.0
    total_time: float = 10000.0
    eval_interval: float = 500.0
    data: DataConfig = field(default_factory=DataConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    targets: list[float] = field(default_factory=list)
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def total_containers(self) -> int:
        return sum(c.containers for c in self.centers)


# ---------------------------------------------------------------- loading


def _line_index(text: str) -> dict[str, int]:
    """Map dotted key paths to 1-based source lines."""
    index: dict[str, int] = {}

    def walk(node, path):
        if node is None:
            return
        index.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = f"{path}.{k.value}" if path else str(k.value)
                index[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, f"{path}[{i}]")

    try:
        walk(yaml.compose(text, Loader=_Loader), "")
    except yaml.YAMLError:
        pass
    return index


def set_override(raw: dict, dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted path like ``algorithm.name`` or ``centers[0].containers``."""
    parts = []
    for piece in dotted.split("."):
        while "[" in piece:
            head, rest = piece.split("[", 1)
            if head:
                parts.append(head)
            idx, piece = rest.split("]", 1)
            parts.append(int(idx))
        if piece:
            parts.append(piece)
    node = raw
    for key in parts[:-1]:
        if isinstance(key, int):
            node = node[key]
        else:
            node = node.setdefault(key, {})
    node[parts[-1]] = value


def parse_overrides(pairs) -> dict[str, Any]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError([f"override {pair!r}: expected key=value"])
        k, v = pair.split("=", 1)
        out[k.strip()] = yaml_load(v)
    return out


def apply_variant(raw: dict, variant: str) -> dict:
    if variant not in VARIANT_PRESETS:
        raise ConfigError([f"unknown variant {variant!r}; choose from {sorted(VARIANT_PRESETS)}"])
    raw = copy.deepcopy(raw)
    raw.setdefault("algorithm", {}).update(VARIANT_PRESETS[variant])
    return raw


def load_raw(path: str | Path) -> tuple[dict, dict[str, int]]:
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: malformed file: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return raw, _line_index(text)


def parse_config(path: str | Path, overrides: dict[str, Any] | None = None,
                 variant: str | None = None) -> ExperimentConfig:
    raw, lines = load_raw(path)
    if variant:
        raw = apply_variant(raw, variant)
    for k, v in (overrides or {}).items():
        set_override(raw, k, v)
    return build_config(raw, source=str(path), lines=lines)


# ---------------------------------------------------------------- validation


class _Errors:
    def __init__(self, source, lines):
        self.source, self.lines, self.items = source, lines or {}, []

    def add(self, path: str, msg: str):
        where = self.source or "<config>"
        # fall back to the nearest enclosing key that has a line
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rsplit(".", 1)[0] if "." in probe else ""
        if probe in self.lines:
            where = f"{where}:{self.lines[probe]}"
        self.items.append(f"{where}: {path}: {msg}")


def _take(raw: dict, cls, path: str, errs: _Errors, required=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        errs.add(path, "expected a mapping")
        return None
    names = {f.name for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            errs.add(f"{path}.{k}" if path else str(k), "unknown field")
    for r in required:
        if r not in raw:
            errs.add(f"{path}.{r}" if path else r, "missing required field")
    return {k: v for k, v in raw.items() if k in names}


def _num(errs, path, value, *, positive=False, nonneg=False, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if ok and integer and not float(value).is_integer():
        ok = False
    if not ok:
        errs.add(path, f"expected a {'integer' if integer else 'number'}, got {value!r}")
        return False
    if positive and not value > 0:
        errs.add(path, f"must be > 0, got {value}")
        return False
    if nonneg and value < 0:
        errs.add(path, f"must be >= 0, got {value}")
        return False
    return True


def build_config(raw: dict, source: str | None = None, lines: dict | None = None) -> ExperimentConfig:
    errs = _Errors(source, lines)
    top = _take(raw, ExperimentConfig, "", errs, required=("seed", "centers", "inter_dc")) or {}

    if "seed" in top:
        _num(errs, "seed", top["seed"], nonneg=True, integer=True)
    for key in ("rotation_interval", "total_time", "eval_interval"):
        if key in top:
            _num(errs, key, top[key], positive=True)

    algo = AlgorithmConfig(**(_take(top.get("algorithm"), AlgorithmConfig, "algorithm", errs) or {}))
    for key, allowed in (("name", ALGORITHMS), ("selection", SELECTION_MODES), ("resource", RESOURCE_MODES),
                         ("time_factor_mode", TIME_FACTOR_MODES), ("decay", DECAY_SCHEDULES)):
        if getattr(algo, key) not in allowed:
            errs.add(f"algorithm.{key}", f"must be one of {list(allowed)}, got {getattr(algo, key)!r}")
    if _num(errs, "algorithm.fedavg_fraction", algo.fedavg_fraction, positive=True) and algo.fedavg_fraction > 1:
        errs.add("algorithm.fedavg_fraction", "must be <= 1")

    data = DataConfig(**(_take(top.get("data"), DataConfig, "data", errs) or {}))
    if data.kind not in DATA_KINDS:
        errs.add("data.kind", f"must be one of {list(DATA_KINDS)}, got {data.kind!r}")
    if data.kind == "file":
        if not data.path:
            errs.add("data.path", "required when data.kind is 'file'")
        for key in ("path", "test_path"):
            value = getattr(data, key)
            if value and not Path(value).is_file():
                errs.add(f"data.{key}", f"no such file: {value}")
    if data.kind == "synthetic":
        _num(errs, "data.classes", data.classes, positive=True, integer=True)
        _num(errs, "data.dim", data.dim, positive=True, integer=True)
        _num(errs, "data.total", data.total, positive=True, integer=True)
    if data.kind == "quadratic":
        if _num(errs, "data.mu", data.mu, positive=True) and _num(errs, "data.L", data.L, positive=True) \
                and data.mu > data.L:
            errs.add("data.mu", "must be <= data.L")
        _num(errs, "data.noise", data.noise, nonneg=True)
        _num(errs, "data.b_scale", data.b_scale, nonneg=True)
        _num(errs, "data.optimum_scale", data.optimum_scale, nonneg=True)
        if data.lr_schedule not in ("constant", "inverse"):
            errs.add("data.lr_schedule", "must be 'constant' or 'inverse'")
    _num(errs, "data.alpha", data.alpha, positive=True)
    if data.center_alpha is not None:
        _num(errs, "data.center_alpha", data.center_alpha, positive=True)

    learner = LearnerConfig(**(_take(top.get("learner"), LearnerConfig, "learner", errs) or {}))
    _num(errs, "learner.learning_rate", learner.learning_rate, nonneg=True)
    if _num(errs, "learner.momentum", learner.momentum, nonneg=True) and learner.momentum >= 1:
        errs.add("learner.momentum", "must be < 1")
    _num(errs, "learner.batch_size", learner.batch_size, positive=True, integer=True)
    _num(errs, "learner.local_epochs", learner.local_epochs, positive=True, integer=True)
    _num(errs, "learner.per_sample_cost", learner.per_sample_cost, positive=True)

    centers = []
    raw_centers = top.get("centers", [])
    if not isinstance(raw_centers, list) or not raw_centers:
        if "centers" in top:
            errs.add("centers", "must be a non-empty list")
        raw_centers = []
    for ci, rc in enumerate(raw_centers):
        cp = f"centers[{ci}]"
        c = _take(rc, CenterConfig, cp, errs, required=("id", "containers", "active_planets", "resources"))
        if c is None or not all(k in c for k in ("id", "containers", "active_planets", "resources")):
            continue
        resources = []
        rlist = c["resources"] if isinstance(c["resources"], list) else []
        if not rlist:
            errs.add(f"{cp}.resources", "needs at least one resource")
        for ri, rr in enumerate(rlist):
            rp = f"{cp}.resources[{ri}]"
            r = _take(rr, ResourceConfig, rp, errs, required=("id",))
            if r is None or "id" not in r:
                continue
            res = ResourceConfig(**r)
            _num(errs, f"{rp}.speed_mean", res.speed_mean, positive=True)
            _num(errs, f"{rp}.speed_stddev", res.speed_stddev, nonneg=True)
            _num(errs, f"{rp}.capacity", res.capacity, positive=True, integer=True)
            if isinstance(res.price, dict):
                if "default" not in res.price:
                    errs.add(f"{rp}.price", "per-container price map needs a 'default' entry")
                for k, v in res.price.items():
                    _num(errs, f"{rp}.price.{k}", v, positive=True)
            else:
                _num(errs, f"{rp}.price", res.price, positive=True)
            resources.append(res)
        ids = [r.id for r in resources]
        if len(set(ids)) != len(ids):
            errs.add(f"{cp}.resources", f"duplicate resource ids {ids}")
        center = CenterConfig(**{**c, "resources": resources})
        ok_n = _num(errs, f"{cp}.containers", center.containers, positive=True, integer=True)
        ok_k = _num(errs, f"{cp}.active_planets", center.active_planets, positive=True, integer=True)
        if ok_n and ok_k and center.active_planets > center.containers:
            errs.add(f"{cp}.active_planets",
                     f"K_i = {center.active_planets} exceeds container count {center.containers}")
        if center.container_speeds is not None:
            if len(center.container_speeds) != center.containers:
                errs.add(f"{cp}.container_speeds", f"needs {center.containers} entries")
            for k, s in enumerate(center.container_speeds):
                _num(errs, f"{cp}.container_speeds[{k}]", s, positive=True)
        _num(errs, f"{cp}.intra_dc_overhead", center.intra_dc_overhead, nonneg=True)
        centers.append(center)

    ids = [c.id for c in centers]
    if ids and sorted(ids) != list(range(1, len(ids) + 1)):
        errs.add("centers", f"center ids must be 1..{len(ids)}, got {ids}")

    inter = None
    ri = _take(top.get("inter_dc"), InterDcConfig, "inter_dc", errs, required=("latency",)) if "inter_dc" in top else None
    if ri is not None and "latency" in ri:
        inter = InterDcConfig(**ri)
        lat = inter.latency
        n = len(raw_centers)
        if not (isinstance(lat, list) and len(lat) == n and all(isinstance(r, list) and len(r) == n for r in lat)):
            errs.add("inter_dc.latency", f"must be a {n}x{n} matrix")
        else:
            for i in range(n):
                if lat[i][i] != 0:
                    errs.add(f"inter_dc.latency[{i}][{i}]", "diagonal must be zero")
                for j in range(n):
                    _num(errs, f"inter_dc.latency[{i}][{j}]", lat[i][j], nonneg=True)
        bw = inter.bandwidth
        if isinstance(bw, list):
            if len(bw) != n or any(not isinstance(r, list) or len(r) != n for r in bw):
                errs.add("inter_dc.bandwidth", f"must be a scalar or a {n}x{n} matrix")
            else:
                for i in range(n):
                    for j in range(n):
                        if i != j:
                            _num(errs, f"inter_dc.bandwidth[{i}][{j}]", bw[i][j], positive=True)
        else:
            _num(errs, "inter_dc.bandwidth", bw, positive=True)

    targets = top.get("targets", [])
    if not isinstance(targets, list):
        errs.add("targets", "must be a list")
        targets = []
    for k, t in enumerate(targets):
        if _num(errs, f"targets[{k}]", t, nonneg=True) and t > 1:
            errs.add(f"targets[{k}]", "accuracy targets lie in [0, 1]")

    if data.kind == "synthetic" and centers and isinstance(data.total, int):
        n_ct = sum(c.containers for c in centers if isinstance(c.containers, int))
        test_n = int(round(data.total * data.test_fraction))
        if data.total - test_n < n_ct:
            errs.add("data.total", f"{data.total - test_n} training samples cannot fill {n_ct} containers")

    if errs.items:
        raise ConfigError(errs.items)
    return ExperimentConfig(
        seed=int(top["seed"]),
        centers=centers,
        inter_dc=inter,
        algorithm=algo,
        rotation_interval=float(top.get("rotation_interval", 1000.0)),
        total_time=float(top.get("total_time", 10000.0)),
        eval_interval=float(top.get("eval_interval", 500.0)),
        data=data,
        learner=learner,
        targets=[float(t) for t in targets],
        output_dir=str(top.get("output_dir", "out")),
    )


def config_from_dict(raw: dict) -> ExperimentConfig:
    return build_config(copy.deepcopy(raw))
