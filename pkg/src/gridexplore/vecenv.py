"""Batched stepping over independent environment slots with auto-reset."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from gridexplore.encoder import Observation
from gridexplore.env import ExplorationEnv, StepResult


def slot_seed(master_seed: int, slot: int, episode: int) -> int:
    """Seed of a slot's ``episode``-th reset; independent of how many slots exist."""
    ss = np.random.SeedSequence([master_seed, slot, episode])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class VecEnv:
    """Ordered pool of environments.

    Results always come back in slot order. With ``workers > 1`` slots are
    stepped on a thread pool; the batch call waits for every slot, so the
    output is identical to the sequential path.
    """

    def __init__(self, envs: Sequence[ExplorationEnv] = (), levels: Sequence[int] = (), master_seed: int = 0, workers: int = 1):
        if len(levels) != len(envs):
            raise ValueError("one level tag per environment required")
        self.envs: list[ExplorationEnv] = list(envs)
        self.level_of: list[int] = list(levels)
        self.master_seed = master_seed
        self._slot_ids: list[int] = list(range(len(self.envs)))
        self._episodes: list[int] = [0] * len(self.envs)
        self._next_id = len(self.envs)
        self._pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def __len__(self) -> int:
        return len(self.envs)

    def _map(self, fn, *iterables):
        if self._pool is None:
            return list(map(fn, *iterables))
        return list(self._pool.map(fn, *iterables))

    def _next_seed(self, i: int) -> int:
        seed = slot_seed(self.master_seed, self._slot_ids[i], self._episodes[i])
        self._episodes[i] += 1
        return seed

    def reset_all(self, seeds: Sequence[int] | None = None) -> list[Observation]:
        if seeds is None:
            seeds = [self._next_seed(i) for i in range(len(self.envs))]
        if len(seeds) != len(self.envs):
            raise ValueError(f"expected {len(self.envs)} seeds, got {len(seeds)}")
        return self._map(lambda env, seed: env.reset(seed), self.envs, seeds)

    def step_batch(self, actions: Sequence[int]) -> list[StepResult]:
        actions = list(actions)
        if len(actions) != len(self.envs):
            raise ValueError(f"expected {len(self.envs)} actions, got {len(actions)}")
        # reset seeds come from per-slot counters, so scheduling order is irrelevant
        return self._map(self._step_slot, list(range(len(self.envs))), actions)

    def _step_slot(self, i: int, action: int) -> StepResult:
        env = self.envs[i]
        res = env.step(action)
        if res.terminated or res.truncated:
            res.info["final_obs"] = res.obs
            res.info["final_rho"] = env.rho
            res.obs = env.reset(self._next_seed(i))
        return res

    def add_envs(self, new_envs: Sequence[ExplorationEnv], level: int, reset: bool = True) -> list[Observation]:
        """Append slots after the existing ones; their episodes keep running."""
        if not new_envs:
            raise ValueError("add_envs needs at least one environment")
        start = len(self.envs)
        for env in new_envs:
            self.envs.append(env)
            self.level_of.append(level)
            self._slot_ids.append(self._next_id)
            self._episodes.append(0)
            self._next_id += 1
        if not reset:
            return []
        return [self.envs[i].reset(self._next_seed(i)) for i in range(start, len(self.envs))]

    def replace_envs(self, new_envs: Sequence[ExplorationEnv], level: int) -> list[Observation]:
        """Drop every slot and start over with ``new_envs`` (classical curriculum switch)."""
        self.envs, self.level_of, self._slot_ids, self._episodes = [], [], [], []
        return self.add_envs(new_envs, level)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
