"""Cumulative curriculum scheduling (plus classical and flat baselines) and policy evaluation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from gridexplore.env import ExplorationEnv
from gridexplore.vecenv import VecEnv


class CurriculumMode(str, enum.Enum):
    CCRL = "ccrl"
    CL = "cl"
    FLAT = "flat"


@dataclass
class EmaTracker:
    tau: float = 0.9
    value: float = 0.0
    initialized: bool = False

    def update(self, rho: float) -> float:
        if not self.initialized:
            self.value = rho
            self.initialized = True
        else:
            self.value = self.tau * self.value + (1.0 - self.tau) * rho
        return self.value


def ema_update(tracker: EmaTracker, rho: float) -> EmaTracker:
    tracker.update(rho)
    return tracker


@dataclass
class StageState:
    current_level: int
    eval_history: dict[int, list[float]] = field(default_factory=dict)
    transitions_per_level: dict[int, int] = field(default_factory=dict)
    ema: dict[int, EmaTracker] = field(default_factory=dict)
    tau: float = 0.9

    def record_eval(self, level: int, rho: float) -> float:
        self.eval_history.setdefault(level, []).append(rho)
        tracker = self.ema.setdefault(level, EmaTracker(self.tau))
        return tracker.update(rho)

    def advance(self, level: int) -> None:
        if level < self.current_level:
            raise ValueError("curriculum level can only increase")
        self.current_level = level


def should_switch(stage: StageState, window: int = 10, threshold: float = 0.95) -> bool:
    """True once the last ``window`` evaluations on the current level average strictly above ``threshold``."""
    history = stage.eval_history.get(stage.current_level, [])
    if len(history) < window:
        return False
    return float(np.mean(history[-window:])) > threshold


def on_switch(
    mode: CurriculumMode,
    vecenv: VecEnv,
    next_level: int,
    n_copies: int,
    make_env: Callable[[int], ExplorationEnv],
    max_level: int,
) -> list:
    """Grow (CCRL) or replace (CL) the training pool for ``next_level``; returns the new slots' observations."""
    if not 1 <= next_level <= max_level:
        raise ValueError(f"next level {next_level} outside 1..{max_level}")
    new_envs = [make_env(next_level) for _ in range(n_copies)]
    if mode == CurriculumMode.CCRL:
        return vecenv.add_envs(new_envs, next_level)
    if mode == CurriculumMode.CL:
        return vecenv.replace_envs(new_envs, next_level)
    raise ValueError("flat training never switches stages")


class Policy(Protocol):
    def __call__(self, maps: np.ndarray, aux: np.ndarray, envs: Sequence[ExplorationEnv]) -> np.ndarray: ...


def evaluate_policy(
    policy: Policy,
    levels: Sequence[int],
    episodes_per_level: int,
    make_env: Callable[[int], ExplorationEnv],
    seeds: Sequence[int],
    stage: StageState | None = None,
) -> dict[int, float]:
    """Run episodes on fresh environment copies and return the mean final exploration rate per level.

    ``seeds`` holds one reset seed per episode, level-major. All episodes run
    side by side so the policy sees full batches.
    """
    envs: list[ExplorationEnv] = []
    tags: list[int] = []
    for level in levels:
        for _ in range(episodes_per_level):
            envs.append(make_env(level))
            tags.append(level)
    if len(seeds) != len(envs):
        raise ValueError(f"need {len(envs)} evaluation seeds, got {len(seeds)}")
    obs = [env.reset(seed) for env, seed in zip(envs, seeds)]
    final = [0.0] * len(envs)
    active = list(range(len(envs)))
    while active:
        maps = np.stack([obs[i].maps for i in active])
        aux = np.stack([obs[i].aux for i in active])
        actions = policy(maps, aux, [envs[i] for i in active])
        still = []
        for i, a in zip(active, actions):
            res = envs[i].step(int(a))
            obs[i] = res.obs
            if res.terminated or res.truncated:
                final[i] = envs[i].rho
            else:
                still.append(i)
        active = still
    result = {}
    for level in levels:
        vals = [f for f, t in zip(final, tags) if t == level]
        result[level] = float(np.mean(vals))
        if stage is not None:
            stage.record_eval(level, result[level])
    return result
