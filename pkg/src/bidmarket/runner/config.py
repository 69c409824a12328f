"""Experiment configuration: strict JSON loading with key-path error messages."""
from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from ..dynamics import IsoPolicy, StepsizeSchedule, StoppingCriterion, equilibrium, substream
from ..network import NetworkCase, case_from_dict, case_to_dict, get_preset, load_case
from ..robustness import (
    ConstantBid, Conforming, DisturbanceModel, MultiplicativeUndercut, SequenceBids, Strategy,
    UniformAbove, undercut_chain,
)

MODES = ("opf_only", "baa", "perturbed", "deviation", "collusion")


class ConfigError(ValueError):
    """Schema problem; ``path`` is the dotted key path of the offending entry."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


@dataclass
class ScheduleConfig:
    kind: str = "constant"
    beta: float = 0.01
    low: float | None = None
    high: float | None = None
    decay: float = 500.0
    sequence: list | None = None

    def build(self) -> StepsizeSchedule:
        return StepsizeSchedule(self.kind, self.beta, self.low, self.high, self.decay, self.sequence)


@dataclass
class StopConfig:
    epsilon: float = 1e-4
    max_iters: int = 10000


@dataclass
class DisturbanceConfig:
    kind: str = "bounded"
    theta: float | None = None
    d_max: float | None = None
    schedule: ScheduleConfig | None = None
    sequence: list | None = None

    def build(self) -> DisturbanceModel:
        sched = self.schedule.build() if self.schedule else None
        return DisturbanceModel(self.kind, self.theta, self.d_max, sched, self.sequence)


@dataclass
class StrategyConfig:
    """One of conforming, constant, undercut, uniform_above, sequence."""

    kind: str = "conforming"
    value: float | None = None
    rival: int | None = None
    floor: float | None = None
    factor: float = 0.99
    low: float | None = None
    width: float = 1.0
    bids: list | None = None

    def build(self) -> Strategy:
        k = self.kind
        if k == "conforming":
            return Conforming()
        if k == "constant":
            return ConstantBid(_need(self.value, "value", k))
        if k == "undercut":
            return MultiplicativeUndercut(_need(self.rival, "rival", k), _need(self.floor, "floor", k), self.factor)
        if k == "uniform_above":
            return UniformAbove(_need(self.low, "low", k), self.width)
        if k == "sequence":
            return SequenceBids(_need(self.bids, "bids", k))
        raise ValueError(f"unknown strategy kind {k!r}")


def _need(v, name, kind):
    if v is None:
        raise ValueError(f"{kind} strategy needs {name!r}")
    return v


@dataclass
class DeviationConfig:
    generator: int
    strategy: StrategyConfig


@dataclass
class CollusionConfig:
    colluders: list
    strategy: str | None = "undercut_next"
    strategies: dict | None = None     # generator id (as string) -> StrategyConfig
    allow_unprotected: bool = False

    def build(self, case: NetworkCase) -> dict[int, Strategy]:
        if self.strategies:
            return {int(k): v.build() for k, v in self.strategies.items()}
        if self.strategy != "undercut_next":
            raise ValueError(f"unknown collusion strategy {self.strategy!r}")
        _, b_star = equilibrium(case)
        if b_star is None:
            raise ValueError("undercut_next strategy needs a unique equilibrium")
        return undercut_chain(case, self.colluders, b_star)


@dataclass
class UmaxConfig:
    samples: int = 1000
    exponent: float = 1.0


@dataclass
class OutputConfig:
    dir: str = "out"
    trace: str = "trace.csv"
    summary: str = "summary.json"
    plots: bool = True


@dataclass
class ExperimentConfig:
    mode: str = "baa"
    case: Any = "ieee9-modified"       # preset name, path to a case file, or inline case object
    seed: int = 0
    initial_bids: list | None = None
    initial_width: float = 10.0
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    stop: StopConfig = field(default_factory=StopConfig)
    iso_policy: str = "deterministic"
    radius: float | None = None
    theta: float | None = None
    disturbance: DisturbanceConfig | None = None
    deviation: DeviationConfig | None = None
    collusion: CollusionConfig | None = None
    umax: UmaxConfig = field(default_factory=UmaxConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def network(self, base: Path | None = None) -> NetworkCase:
        if isinstance(self.case, dict):
            return case_from_dict(self.case, name="inline")
        p = Path(self.case)
        if p.suffix == ".json":
            return load_case(p if p.is_absolute() or base is None else base / p)
        return get_preset(self.case)

    def initial(self, case: NetworkCase) -> np.ndarray:
        if self.initial_bids is not None:
            return np.asarray(self.initial_bids, float)
        rng = substream(self.seed, "init")
        return case.c + rng.uniform(0.0, self.initial_width, size=case.n_gens)

    def stopping(self) -> StoppingCriterion:
        return StoppingCriterion(self.stop.epsilon, self.stop.max_iters)

    def iso(self) -> IsoPolicy:
        return IsoPolicy(self.iso_policy, self.seed)


_NESTED = {
    "schedule": ScheduleConfig, "stop": StopConfig, "disturbance": DisturbanceConfig,
    "deviation": DeviationConfig, "collusion": CollusionConfig, "umax": UmaxConfig,
    "output": OutputConfig, "strategy": StrategyConfig,
}
_NUM = (int, float)
_TYPES = {
    "beta": _NUM, "low": _NUM, "high": _NUM, "decay": _NUM, "epsilon": _NUM, "max_iters": int,
    "theta": _NUM, "d_max": _NUM, "value": _NUM, "rival": int, "floor": _NUM, "factor": _NUM,
    "width": _NUM, "generator": int, "samples": int, "exponent": _NUM, "seed": int,
    "initial_width": _NUM, "radius": _NUM, "kind": str, "mode": str, "iso_policy": str,
    "dir": str, "trace": str, "summary": str, "plots": bool, "allow_unprotected": bool,
    "initial_bids": list, "sequence": list, "bids": list, "colluders": list, "strategies": dict,
    "case": (str, dict),
}


def _build(cls, doc, path: str):
    if not isinstance(doc, dict):
        raise ConfigError(path, f"expected an object, got {type(doc).__name__}")
    names = {f.name for f in fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(_join(path, key), "unknown key")
    kwargs = {}
    for f in fields(cls):
        sub = _join(path, f.name)
        if f.name not in doc:
            if f.default is MISSING and f.default_factory is MISSING:
                raise ConfigError(sub, "missing required key")
            continue
        v = doc[f.name]
        if v is None:
            kwargs[f.name] = None
            continue
        if f.name in _NESTED and not (cls is CollusionConfig and f.name == "strategy"):
            kwargs[f.name] = _build(_NESTED[f.name], v, sub)
            continue
        want = _TYPES.get(f.name)
        if want is not None and (not isinstance(v, want) or (isinstance(v, bool) and want in (_NUM, int))):
            raise ConfigError(sub, f"type mismatch, got {type(v).__name__}")
        if f.name == "strategies":
            v = {str(k): _build(StrategyConfig, s, _join(sub, str(k))) for k, s in v.items()}
        kwargs[f.name] = v
    return cls(**kwargs)


def _join(path, key):
    return f"{path}.{key}" if path else key


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not doc:
        raise ConfigError("", "empty configuration")
    cfg = _build(ExperimentConfig, doc, "")
    check_config(cfg)
    return cfg


def check_config(cfg: ExperimentConfig) -> None:
    """Mode-specific completeness and value checks."""
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {list(MODES)}, got {cfg.mode!r}")
    need = {"perturbed": "disturbance", "deviation": "deviation", "collusion": "collusion"}.get(cfg.mode)
    if need and getattr(cfg, need) is None:
        raise ConfigError(need, f"required for mode {cfg.mode!r}")
    if cfg.iso_policy not in ("deterministic", "randomized"):
        raise ConfigError("iso_policy", f"unknown policy {cfg.iso_policy!r}")
    for path, build in (("schedule", cfg.schedule.build),
                        ("disturbance", cfg.disturbance.build if cfg.disturbance else None),
                        ("stop", cfg.stopping)):
        if build is None:
            continue
        try:
            build()
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
    if cfg.deviation is not None:
        try:
            cfg.deviation.strategy.build()
        except ValueError as exc:
            raise ConfigError("deviation.strategy", str(exc)) from None
    if cfg.collusion is not None:
        if not cfg.collusion.colluders:
            raise ConfigError("collusion.colluders", "must list at least one generator")
        if cfg.collusion.strategies:
            for k, s in cfg.collusion.strategies.items():
                try:
                    s.build()
                except ValueError as exc:
                    raise ConfigError(f"collusion.strategies.{k}", str(exc)) from None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError("", "empty configuration file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    if isinstance(cfg.case, NetworkCase):
        doc["case"] = case_to_dict(cfg.case)
    return doc


def dump_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
