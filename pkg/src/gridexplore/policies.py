"""Policies usable by evaluation: the greedy network policy and a scripted sweep."""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from gridexplore.env import ExplorationEnv
from gridexplore.gridworld import Action, Heading, Pose
from gridexplore.neuralnet import Params, forward


class GreedyPolicy:
    """Argmax over the network's logits."""

    def __init__(self, params: Params):
        self.params = params

    def __call__(self, maps: np.ndarray, aux: np.ndarray, envs: Sequence[ExplorationEnv] = ()) -> np.ndarray:
        logits, _, _ = forward(self.params, maps, aux)
        return logits.argmax(axis=1)


class SweepPolicy:
    """Ground-truth coverage script: visit every free cell and spin a full turn there.

    Uses the true map, so it is an oracle rather than an agent. Turning
    through all four headings at every free cell fires every beam angle from
    every free cell, which is exactly the observable set.
    """

    def __init__(self) -> None:
        self._plans: dict[int, deque[int]] = {}

    def __call__(self, maps: np.ndarray, aux: np.ndarray, envs: Sequence[ExplorationEnv]) -> np.ndarray:
        actions = []
        for env in envs:
            key = id(env)
            plan = self._plans.get(key)
            if plan is None or env.steps == 0:
                plan = deque(sweep_plan(env))
                self._plans[key] = plan
            actions.append(plan.popleft() if plan else int(Action.TURN_LEFT))
        return np.array(actions, dtype=int)


def _turns(frm: Heading, to: Heading) -> list[int]:
    diff = (int(to) - int(frm)) % 4
    if diff == 1:
        return [int(Action.TURN_RIGHT)]
    if diff == 3:
        return [int(Action.TURN_LEFT)]
    return [int(Action.TURN_RIGHT)] * diff


def sweep_plan(env: ExplorationEnv) -> list[int]:
    """Depth-first tour of the free cells from the current pose, four turns per cell."""
    gmap, pose = env.map, env.pose
    visited = {(pose.row, pose.col)}
    actions = [int(Action.TURN_LEFT)] * 4
    heading = pose.heading
    # stack entries: (row, col, next heading to try, heading used to arrive)
    stack: list[tuple[int, int, int, Heading | None]] = [(pose.row, pose.col, 0, None)]
    while stack:
        r, c, k, arrived = stack.pop()
        if k < 4:
            stack.append((r, c, k + 1, arrived))
            h = Heading(k)
            dr, dc = h.delta
            nr, nc = r + dr, c + dc
            if (nr, nc) in visited or not gmap.is_free(nr, nc):
                continue
            visited.add((nr, nc))
            actions.extend(_turns(heading, h))
            actions.append(int(Action.FORWARD))
            actions.extend([int(Action.TURN_LEFT)] * 4)
            heading = h
            stack.append((nr, nc, 0, h))
        elif arrived is not None:
            back = Heading((int(arrived) + 2) % 4)
            actions.extend(_turns(heading, back))
            actions.append(int(Action.FORWARD))
            heading = back
    return actions
