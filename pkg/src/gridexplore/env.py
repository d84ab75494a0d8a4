"""Exploration MDP: episode lifecycle, reward and exploration-rate bookkeeping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from gridexplore.encoder import EncoderConfig, Observation, build_observation
from gridexplore.gridworld import Action, GroundTruthMap, Pose, apply_action, place_obstacles, random_free_pose
from gridexplore.maps import load_builtin
from gridexplore.sensor import BeliefMap, LidarConfig, integrate_scan, scan

IDLE_PENALTY = -0.005
COLLISION_PENALTY = -1.0
SUCCESS_BONUS = 1.0


@dataclass(frozen=True)
class EnvConfig:
    map_id: str = "level1"
    obstacle_count: int = 4
    max_steps: int = 1000
    success_threshold: float = 0.99
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.success_threshold <= 1:
            raise ValueError("success_threshold must lie in (0, 1]")


@dataclass
class StepResult:
    obs: Observation
    reward: float
    terminated: bool
    truncated: bool
    info: dict[str, Any]


def exploration_rate(belief: BeliefMap, gmap: GroundTruthMap) -> float:
    return belief.known_count / gmap.observable_count


def compute_reward(rho_prev: float, rho_now: float, collided: bool, success: bool) -> float:
    if rho_now > rho_prev:
        r = min(max((rho_now * rho_now - rho_prev * rho_prev) * 10.0, 0.0), 1.0)
    else:
        r = IDLE_PENALTY
    if success:
        r += SUCCESS_BONUS
    if collided:
        r += COLLISION_PENALTY
    return r


class UsageError(RuntimeError):
    pass


class ExplorationEnv:
    """One simulator instance.

    Each ``reset`` restores the base map, samples a start pose, places the
    random obstacles and integrates the first scan.
    """

    def __init__(self, cfg: EnvConfig, base_map: GroundTruthMap | None = None):
        self.cfg = cfg
        self.base_map = base_map if base_map is not None else load_builtin(cfg.map_id, cfg.lidar)
        self.rng = np.random.default_rng(cfg.seed)
        self.map: GroundTruthMap = self.base_map
        self.belief = BeliefMap(self.base_map.height, self.base_map.width)
        self.pose = Pose(0, 0)
        self.rho = 0.0
        self.steps = 0
        self.done = True
        self.trace: list[dict[str, Any]] = []

    def reset(self, seed: int | None = None) -> Observation:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.pose = random_free_pose(self.base_map, self.rng)
        self.map = place_obstacles(self.base_map, self.cfg.obstacle_count, self.pose, self.rng)
        self.belief = BeliefMap(self.map.height, self.map.width)
        self.steps = 0
        self.done = False
        self.trace = []
        obs = self._sense()
        self.rho0 = self.rho
        return obs

    def _sense(self) -> Observation:
        s = scan(self.map, self.pose, self.cfg.lidar)
        integrate_scan(self.belief, self.map, self.pose, s)
        self.rho = exploration_rate(self.belief, self.map)
        return build_observation(self.belief, self.pose, s, self.cfg.encoder, self.cfg.lidar)

    def observe(self) -> Observation:
        """Observation of the current state without integrating anything new."""
        s = scan(self.map, self.pose, self.cfg.lidar)
        return build_observation(self.belief, self.pose, s, self.cfg.encoder, self.cfg.lidar)

    def step(self, action: int | Action) -> StepResult:
        if self.done:
            raise UsageError("step() called on a finished episode; call reset() first")
        action = Action(action)
        outcome = apply_action(self.map, self.pose, action)
        rho_prev = self.rho
        if outcome.collided:
            obs = self.observe()
        else:
            self.pose = outcome.new_pose
            obs = self._sense()
        self.steps += 1
        success = not outcome.collided and self.rho >= self.cfg.success_threshold
        reward = compute_reward(rho_prev, self.rho, outcome.collided, success)
        terminated = outcome.collided or success
        truncated = not terminated and self.steps >= self.cfg.max_steps
        self.done = terminated or truncated
        self.trace.append(
            {
                "step": self.steps,
                "action": int(action),
                "reward": reward,
                "rho": self.rho,
                "row": self.pose.row,
                "col": self.pose.col,
                "heading": self.pose.heading.degrees,
                "terminated": int(terminated),
                "truncated": int(truncated),
            }
        )
        info = {"exploration_rate": self.rho, "collided": outcome.collided, "success": success}
        return StepResult(obs, reward, terminated, truncated, info)

    def trace_csv(self) -> str:
        return trace_to_csv(self.trace)


TRACE_FIELDS = ["step", "action", "reward", "rho", "row", "col", "heading", "terminated", "truncated"]


def trace_to_csv(rows: list[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def read_trace_csv(text: str) -> list[dict[str, Any]]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                k: (float(v) if k in ("reward", "rho") else int(v))
                for k, v in row.items()
            }
        )
    return rows
