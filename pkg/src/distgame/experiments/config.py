"""Experiment configuration: schema, loading, hashing and object factories."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..games import (
    LinearQuadraticGame,
    LQRConfig,
    NavigationConfig,
    PursuitConfig,
    PursuitEvasionGame,
    UnicycleNavigationGame,
)
from ..policy import AttentionTeamPolicy, RandomTeamPolicy
from ..trainer import TrainConfig, TrainConfigError

GAMES = {
    "lqr": (LQRConfig, LinearQuadraticGame),
    "navigation": (NavigationConfig, UnicycleNavigationGame),
    "pursuit": (PursuitConfig, PursuitEvasionGame),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PolicySection(_Strict):
    widths: list[int] = Field(default_factory=lambda: [64, 64], min_length=1)
    cov_width: int = Field(16, gt=0)
    init_std: float = Field(0.3, gt=0)
    feature_scale: float = Field(1.0, gt=0)
    gain_init: float = Field(1.0, gt=0)
    qk_init: float = Field(1.0, gt=0)
    attention_axis: Literal["features", "neighbors"] = "features"
    # team -> role of each local agent; teams not listed share one role
    roles: dict[int, list[int]] = Field(default_factory=dict)

    @field_validator("widths")
    @classmethod
    def _positive(cls, v):
        if any(w <= 0 for w in v):
            raise ValueError("layer widths must be positive")
        return v


class TeamSection(_Strict):
    kind: Literal["attention", "random"] = "attention"
    frozen: bool = False
    init_checkpoint: str | None = None


class EvalSection(_Strict):
    episodes: int = Field(100, ge=0)
    seed: int = 12345
    # extra policies entered in pursuit tournaments besides the checkpoints
    opponents: list[Literal["random", "untrained"]] = Field(default_factory=lambda: ["random"])
    goal_tolerance: float = Field(0.15, gt=0)


class ExperimentConfig(_Strict):
    experiment: Literal["lqr", "navigation", "pursuit"]
    name: str | None = None
    seed: int = 0
    env: dict[str, Any] = Field(default_factory=dict)
    policy: PolicySection = Field(default_factory=PolicySection)
    teams: dict[int, TeamSection] = Field(default_factory=dict)
    train: dict[str, Any] = Field(default_factory=dict)
    eval: EvalSection = Field(default_factory=EvalSection)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _check_sections(self):
        cfg_cls, _ = GAMES[self.experiment]
        known = {f.name for f in dataclasses.fields(cfg_cls)}
        unknown = sorted(set(self.env) - known)
        if unknown:
            raise ValueError(f"env: unknown keys {unknown} for {self.experiment}")
        known_train = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
        unknown = sorted(set(self.train) - known_train)
        if unknown:
            raise ValueError(f"train: unknown keys {unknown}")
        try:
            self.train_config()
        except (TrainConfigError, TypeError) as exc:
            raise ValueError(f"train: {exc}") from None
        n_teams = self.make_env().spec.n_teams
        bad = sorted(t for t in set(self.teams) | set(self.policy.roles) if not 0 <= t < n_teams)
        if bad:
            raise ValueError(f"teams {bad} do not exist (game has {n_teams})")
        return self

    @property
    def run_name(self) -> str:
        return self.name or self.experiment

    def env_config(self):
        cfg_cls, _ = GAMES[self.experiment]
        return cfg_cls(**self.env)

    def make_env(self):
        _, game_cls = GAMES[self.experiment]
        return game_cls(self.env_config())

    def env_factory(self):
        env_cfg = self.env_config()
        _, game_cls = GAMES[self.experiment]
        return lambda: game_cls(env_cfg)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        d = dict(self.train)
        for key in ("critic_widths", "frozen_teams"):
            if key in d:
                d[key] = tuple(d[key])
        frozen = set(d.get("frozen_teams", ())) | {t for t, s in self.teams.items() if s.frozen}
        d["frozen_teams"] = tuple(sorted(frozen))
        return TrainConfig(seed=self.seed if seed is None else seed, **d).validate()

    def team(self, t: int) -> TeamSection:
        return self.teams.get(t, TeamSection())


def load_config(path) -> ExperimentConfig:
    """Read YAML or JSON and validate; raises pydantic.ValidationError on schema errors."""
    text = Path(path).read_text()
    data = yaml.safe_load(text) if text.strip() else {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: top level must be a mapping")
    return ExperimentConfig.model_validate(data)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def policy_seed(seed: int, team: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0xB01C, team])


def build_policies(cfg: ExperimentConfig, spec, env, seed: int | None = None) -> dict:
    """Fresh policies per the config; attention teams may start from a checkpoint."""
    seed = cfg.seed if seed is None else seed
    p = cfg.policy
    out = {}
    for t in range(spec.n_teams):
        sec = cfg.team(t)
        if sec.kind == "random":
            out[t] = RandomTeamPolicy(t, spec, env.action_low, env.action_high)
            continue
        if sec.init_checkpoint:
            out[t] = AttentionTeamPolicy.load(sec.init_checkpoint, spec, team=t)
            continue
        out[t] = AttentionTeamPolicy.create(
            t,
            spec,
            policy_seed(seed, t),
            roles=p.roles.get(t),
            widths=tuple(p.widths),
            cov_width=p.cov_width,
            init_std=p.init_std,
            feature_scale=p.feature_scale,
            gain_init=p.gain_init,
            qk_init=p.qk_init,
            attention_axis=p.attention_axis,
        )
    return out
