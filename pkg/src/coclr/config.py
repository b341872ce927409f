"""Experiment configuration in a flat key-path text format.

One ``key.path = value`` per line; values are JSON literals (numbers,
quoted strings, ``true``/``false``, lists).  Blank lines and lines starting
with ``#`` are ignored.  Example::

    schema_version = 1
    run.tag = "coclr"
    run.seeds = [0, 1, 2, 3, 4]
    plan.k = 5
    plan.stages = [["infonce", "both", 60, "init"], ["coclr", "1", 20, "cycle1-v1"]]

Serialisation writes every key in schema order, so parse -> dump -> parse
is lossless.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace

from .cotrain import Stage, TrainPlan
from .evaluation import ProbeHyper
from .synthdata import AugmentSpec, DatasetSpec

SCHEMA_VERSION = 1
REQUIRED = object()


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (python type, default)
SCHEMA: dict[str, tuple[type, object]] = {
    "schema_version": (int, REQUIRED),
    "run.tag": (str, REQUIRED),
    "run.seeds": (list, [0]),
    "run.out": (str, "runs"),
    "plan.stages": (list, REQUIRED),
    "plan.k": (int, REQUIRED),
    "plan.tau": (float, REQUIRED),
    "plan.momentum": (float, REQUIRED),
    "plan.queue_capacity": (int, REQUIRED),
    "plan.batch_size": (int, REQUIRED),
    "plan.lr": (float, REQUIRED),
    "plan.weight_decay": (float, 1e-5),
    "plan.granularity": (str, "cycle"),
    "plan.backbone": (list, [64, 64]),
    "plan.head": (list, [32, 16]),
    "augment.sigma": (float, AugmentSpec.sigma),
    "augment.dropout": (float, AugmentSpec.dropout),
    "eval.every": (int, 0),
    "eval.probe_steps": (int, ProbeHyper.steps),
    "eval.probe_lr": (float, ProbeHyper.lr),
    "eval.probe_l2": (float, ProbeHyper.l2),
}
for _f in fields(DatasetSpec):
    SCHEMA[f"dataset.{_f.name}"] = (type(_f.default), _f.default)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def with_value(self, key: str, value) -> "ExperimentConfig":
        if key not in SCHEMA:
            raise ConfigError(key, "unknown parameter")
        vals = dict(self.values)
        vals[key] = _coerce(key, value)
        return ExperimentConfig(vals)

    @property
    def tag(self) -> str:
        return self.values["run.tag"]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.values["run.seeds"]]

    def dataset_spec(self, seed: int) -> DatasetSpec:
        kw = {f.name: self.values[f"dataset.{f.name}"] for f in fields(DatasetSpec)}
        kw["seed"] = int(kw["seed"]) + int(seed)
        return DatasetSpec(**kw)

    def plan(self, seed: int) -> TrainPlan:
        v = self.values
        stages = tuple(Stage(str(s[0]), str(s[1]), int(s[2]), str(s[3]) if len(s) > 3 else "")
                       for s in v["plan.stages"])
        return TrainPlan(stages=stages, k=v["plan.k"], tau=v["plan.tau"], momentum=v["plan.momentum"],
                         queue_capacity=v["plan.queue_capacity"], batch_size=v["plan.batch_size"],
                         lr=v["plan.lr"], weight_decay=v["plan.weight_decay"], seed=int(seed),
                         granularity=v["plan.granularity"], backbone=tuple(v["plan.backbone"]),
                         head=tuple(v["plan.head"]),
                         augment=AugmentSpec(v["augment.sigma"], v["augment.dropout"]))

    def probe_hyper(self) -> ProbeHyper:
        v = self.values
        return replace(ProbeHyper(), steps=v["eval.probe_steps"], lr=v["eval.probe_lr"], l2=v["eval.probe_l2"])


def _coerce(key: str, value):
    typ = SCHEMA[key][0]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, typ) or (typ is int and isinstance(value, bool)):
        raise ConfigError(key, f"expected {typ.__name__}, got {type(value).__name__}")
    return value


def parse_config(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, _, literal = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(key, "unknown parameter")
        if key in values:
            raise ConfigError(key, "given twice")
        try:
            value = json.loads(literal.strip())
        except json.JSONDecodeError as exc:
            raise ConfigError(key, f"invalid value ({exc.msg})") from None
        values[key] = _coerce(key, value)
    for key, (_, default) in SCHEMA.items():
        if key not in values:
            if default is REQUIRED:
                raise ConfigError(key, "required field is missing")
            values[key] = default
    if values["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {values['schema_version']}")
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    for i, st in enumerate(cfg["plan.stages"]):
        if not isinstance(st, list) or len(st) not in (3, 4) or not isinstance(st[2], int):
            raise ConfigError(f"plan.stages[{i}]", "expected [loss, view, epochs] or [loss, view, epochs, name]")
    if not cfg.seeds:
        raise ConfigError("run.seeds", "need at least one seed")
    from .cotrain import PlanError
    try:
        cfg.plan(cfg.seeds[0]).validate()
    except PlanError as exc:
        msg = str(exc)
        key = msg.split(":")[0].split(" ")[0] if msg.startswith("plan.") else "plan"
        raise ConfigError(key, msg) from None
    try:
        cfg.dataset_spec(0).validate()
    except ValueError as exc:
        raise ConfigError("dataset", str(exc)) from None


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key in SCHEMA:
        lines.append(f"{key} = {json.dumps(cfg.values[key])}")
    return "\n".join(lines) + "\n"


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def parse_value(key: str, text: str):
    """Parse a command-line override for ``key``."""
    if key not in SCHEMA:
        raise ConfigError(key, "unknown parameter")
    try:
        return _coerce(key, json.loads(text))
    except json.JSONDecodeError:
        return _coerce(key, text)
