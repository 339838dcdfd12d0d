"""Experiment configuration (JSON)."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .dataset import BehaviorSpec
from .envs import builtin_names, make_env
from .errors import ConfigError, InvalidArgumentError
from .features import FAMILIES
from .mdp import TabularMdp

SAMPLERS = ("uniform", "btd", "subtrajectory", "full_trajectory", "mixed")


@dataclass
class EnvSpec:
    name: Optional[str] = "four_rooms"
    params: Dict[str, Any] = field(default_factory=dict)
    path: Optional[str] = None


@dataclass
class DatasetSpec:
    n_traj: int = 2000
    traj_len: int = 100
    behavior: Dict[str, Any] = field(default_factory=lambda: BehaviorSpec().to_dict())


@dataclass
class BtdSpec:
    K: int = 20
    n_sub: int = 20000
    len_min: int = 5
    len_max: int = 100
    max_iters: int = 200
    tol: float = 1e-6


@dataclass
class Prop1Spec:
    family: str = "random"
    d: int = 32
    n_z: int = 2000
    n_policies: int = 512
    n_quadratic: int = 1000


@dataclass
class DilutionSpec:
    family: str = "random"
    dims: List[int] = field(default_factory=lambda: [4, 8, 16, 32, 64])
    n_policies: int = 512
    n_sub: int = 100_000
    unit_rows: bool = True


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    feature_family: str = "lra_sr"
    d: int = 64
    sampler: str = "btd"
    alpha: float = 0.0
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    btd: BtdSpec = field(default_factory=BtdSpec)
    library_size: int = 64
    probe_size: Optional[int] = None
    ridge: float = 1e-6
    gamma: Optional[float] = None
    seeds: List[int] = field(default_factory=lambda: [0])
    test_tasks: Optional[Dict[str, List[float]]] = None
    prop1: Prop1Spec = field(default_factory=Prop1Spec)
    dilution: DilutionSpec = field(default_factory=DilutionSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        doc = self.to_dict()
        for key, value in changes.items():
            target = doc
            parts = key.split(".")
            for p in parts[:-1]:
                target = target[p]
            target[parts[-1]] = value
        return ExperimentConfig.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        doc = copy.deepcopy(doc)
        nested = {"env": EnvSpec, "dataset": DatasetSpec, "btd": BtdSpec, "prop1": Prop1Spec,
                  "dilution": DilutionSpec}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in doc.items():
            if key in nested:
                sub = nested[key]
                if not isinstance(value, dict):
                    raise ConfigError(f"{key} must be an object")
                bad = set(value) - {f.name for f in fields(sub)}
                if bad:
                    raise ConfigError(f"unknown keys in {key}: {sorted(bad)}")
                kwargs[key] = sub(**value)
            else:
                kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"configuration file {p} does not exist")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        env = doc.get("env") if isinstance(doc, dict) else None
        if isinstance(env, dict) and env.get("path") and not Path(env["path"]).is_absolute():
            env["path"] = str((p.parent / env["path"]).resolve())
        return cls.from_dict(doc)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        if self.env.path is None:
            need(self.env.name in builtin_names(), f"env.name must be one of {builtin_names()}")
        else:
            need(Path(self.env.path).is_file(), f"env.path {self.env.path} does not exist")
        need(self.feature_family in FAMILIES, f"feature_family must be one of {FAMILIES}")
        need(isinstance(self.d, int) and self.d >= 1, "d must be a positive integer")
        need(self.sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}")
        need(0.0 <= float(self.alpha) <= 1.0, "alpha must lie in [0, 1]")
        need(self.dataset.n_traj >= 1 and self.dataset.traj_len >= 1, "dataset sizes must be >= 1")
        try:
            BehaviorSpec.from_dict(self.dataset.behavior)
        except InvalidArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        b = self.btd
        need(b.K >= 1 and b.n_sub >= 1 and b.max_iters >= 1 and b.tol > 0, "btd settings out of range")
        need(0 <= b.len_min <= b.len_max <= self.dataset.traj_len,
             "need 0 <= btd.len_min <= btd.len_max <= dataset.traj_len")
        need(self.library_size >= 1, "library_size must be >= 1")
        need(self.probe_size is None or self.probe_size >= 1, "probe_size must be >= 1")
        need(self.ridge >= 0, "ridge must be >= 0")
        need(self.gamma is None or 0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)")
        need(isinstance(self.seeds, list) and len(self.seeds) >= 1
             and all(isinstance(s, int) and s >= 0 for s in self.seeds), "seeds must be nonnegative integers")
        if self.test_tasks is not None:
            need(isinstance(self.test_tasks, dict) and self.test_tasks, "test_tasks must be a nonempty object")
        need(self.prop1.family in FAMILIES and self.prop1.n_z >= 2 and self.prop1.n_policies >= 2,
             "prop1 settings out of range")
        need(self.dilution.family in FAMILIES and self.dilution.dims == sorted(self.dilution.dims),
             "dilution.dims must be ascending and the family known")

    def build_env(self):
        """The MDP and its named test rewards."""
        if self.env.path is not None:
            try:
                mdp = TabularMdp.from_json(Path(self.env.path).read_text())
            except (OSError, InvalidArgumentError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot load MDP from {self.env.path}: {exc}") from exc
            tasks = {}
        else:
            try:
                mdp, tasks = make_env(self.env.name, **self.env.params)
            except (TypeError, InvalidArgumentError) as exc:
                raise ConfigError(f"cannot build environment {self.env.name}: {exc}") from exc
        if self.gamma is not None:
            mdp = mdp.with_discount(self.gamma)
        if self.test_tasks is not None:
            tasks = {}
            for name, vec in self.test_tasks.items():
                r = np.asarray(vec, dtype=float)
                if r.shape != (mdp.n_states,):
                    raise ConfigError(f"test task {name!r} has {r.size} entries, expected {mdp.n_states}")
                tasks[name] = r
        if not tasks:
            raise ConfigError("no test tasks: give test_tasks explicitly for file-based MDPs")
        return mdp, tasks

    def env_label(self) -> str:
        return self.env.name if self.env.path is None else Path(self.env.path).stem
