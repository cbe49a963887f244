"""Experiment configuration: strict JSON schema, dotted overrides, line-anchored errors.

Layout::

    {"env":   {"type": "chains", "params": {...}},
     "skill": {"algorithms": ["dusdi", "diayn_mc"], ...SkillLearnerConfig fields...},
     "task":  {"name": "chains-goal", "params": {...}, "methods": [...], "budget": 2000, ...},
     "eval":  {"steps": 20000, "window": 10},
     "run":   {"master_seed": 0, "n_seeds": 3, "out": null}}

Every block and every key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .envs import ENVS, TASKS, make_env, make_task
from .hrl import METHODS
from .learner import ALGORITHMS, SkillLearnerConfig


class ConfigError(ValueError):
    """Invalid configuration; the message lists one ``source:line: problem`` per issue."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvBlock(_Strict):
    type: str = "chains"
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("type")
    @classmethod
    def _known(cls, v):
        if v not in ENVS:
            raise ValueError(f"unknown env type {v!r}; choose from {sorted(ENVS)}")
        return v


class SkillBlock(_Strict):
    algorithms: tuple[Literal["dusdi", "diayn", "diayn_mc"], ...] = ("dusdi", "diayn_mc")
    k: int = Field(5, ge=2)
    lam: float = Field(0.1, ge=0.0)
    reward_mode: Literal["log", "raw"] = "log"
    alpha: float = Field(0.02, gt=0.0)
    gamma: float = Field(0.99, ge=0.0, lt=1.0)
    eta: float = Field(0.1, gt=0.0, le=1.0)
    decomposed: bool = True
    critic: Literal["tabular", "component", "local"] = "local"
    skill_keys: Literal["flat", "component"] = "flat"
    train_steps: int = Field(200_000, ge=0)
    n_envs: int = Field(4, ge=1)
    batch_size: int = Field(64, ge=1)
    replay_capacity: int = Field(10_000, ge=1)
    warmup: int = Field(256, ge=0)
    epsilon: float = Field(0.5, gt=0.0)
    psi_mode: Literal["joint", "pairwise"] = "joint"
    psi_cap: int = Field(100_000, ge=1)
    table_cap: int = Field(60_000_000, ge=1)
    skill_cap: int = Field(4096, ge=1)

    def learner_config(self, algorithm: str, seed: int) -> SkillLearnerConfig:
        fields = self.model_dump(exclude={"algorithms"})
        if algorithm != "dusdi":
            # component keys only make sense for factored skills
            fields["skill_keys"] = "flat"
        return SkillLearnerConfig(algorithm=algorithm, seed=seed, **fields)


class TaskBlock(_Strict):
    name: str = "chains-goal"
    params: dict[str, Any] = Field(default_factory=dict)
    methods: tuple[str, ...] = ("dusdi_hrl", "cpg", "diayn_mc_hrl", "vanilla_flat_q")
    budget: int = Field(2000, ge=0)
    L: int = Field(10, ge=1)
    lr: float = Field(0.02, gt=0.0)
    batch: int = Field(4, ge=1)
    eval_every: int = Field(50, ge=1)
    eval_episodes: int = Field(20, ge=1)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v not in TASKS:
            raise ValueError(f"unknown task {v!r}; choose from {sorted(TASKS)}")
        return v

    @field_validator("methods")
    @classmethod
    def _methods(cls, v):
        bad = [m for m in v if m not in METHODS]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHODS)}")
        return v


class EvalBlock(_Strict):
    steps: int = Field(20_000, ge=1)
    window: int = Field(10, ge=1)


class RunBlock(_Strict):
    master_seed: int = Field(0, ge=0, lt=2**64)
    n_seeds: int = Field(3, ge=1)
    out: str | None = None


METHOD_SKILLS = {"dusdi_hrl": "dusdi", "cpg": "dusdi", "diayn_hrl": "diayn",
                 "diayn_mc_hrl": "diayn_mc", "vanilla_flat_q": None}


class ExperimentConfig(_Strict):
    env: EnvBlock = Field(default_factory=EnvBlock)
    skill: SkillBlock = Field(default_factory=SkillBlock)
    task: TaskBlock = Field(default_factory=TaskBlock)
    eval: EvalBlock = Field(default_factory=EvalBlock)
    run: RunBlock = Field(default_factory=RunBlock)

    @model_validator(mode="after")
    def _resolve(self):
        try:
            env = make_env(self.env.type, **self.env.params)
        except (TypeError, ValueError) as e:
            raise ValueError(f"env.params: {e}") from None
        try:
            make_task(self.task.name, env, **self.task.params)
        except (TypeError, ValueError) as e:
            raise ValueError(f"task.params: {e}") from None
        return self

    @property
    def skill_algorithms(self) -> tuple[str, ...]:
        """Algorithms to train: the listed ones plus whatever the methods need, in a fixed order."""
        need = set(self.skill.algorithms) | {METHOD_SKILLS[m] for m in self.task.methods} - {None}
        return tuple(a for a in ALGORITHMS if a in need)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# --- parsing ------------------------------------------------------------------

def _line_of(text: str, loc: tuple) -> int:
    """Best-effort line of the innermost key in ``loc``: each key is searched
    for after the position of its parent."""
    pos, line = 0, 1
    for part in loc:
        if not isinstance(part, str):
            continue
        hit = text.find(json.dumps(part), pos)
        if hit < 0:
            break
        pos = hit
        line = text.count("\n", 0, hit) + 1
    return line


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are JSON when they parse, else strings."""
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--override {item}: expected key=value")
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"--override {item}: {p} is not a block")
            node = nxt
        node[parts[-1]] = _parse_value(raw)
    return data


def parse_config(text: str, source: str = "<config>", overrides: list[str] | None = None) -> ExperimentConfig:
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: top level must be a JSON object")
    overridden = set()
    for item in overrides or []:
        overridden.add(tuple(item.partition("=")[0].split(".")))
    data = apply_overrides(data, list(overrides or []))
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = tuple(err["loc"])
            msg = err["msg"].removeprefix("Value error, ")
            if not loc and msg.partition(":")[0] in ("env.params", "task.params"):
                head, _, msg = msg.partition(": ")
                loc = tuple(head.split("."))
            name = ".".join(str(p) for p in loc) or "(root)"
            if err["type"] == "extra_forbidden":
                msg = f"unknown key {str(loc[-1])!r}"
            if any(loc[:len(o)] == o for o in overridden):
                where = "--override"
            else:
                where = f"{source}:{_line_of(text, loc)}"
            lines.append(f"{where}: {name}: {msg}")
        raise ConfigError("\n".join(lines)) from None


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"{p}: cannot read config: {e.strerror}") from None
    return parse_config(text, str(p), overrides)
