"""Evaluation reports, sample-efficiency lookup, run aggregation, benchmarking and trajectory rendering."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from gridexplore.env import EnvConfig, ExplorationEnv
from gridexplore.gridworld import Action, GroundTruthMap, apply_action
from gridexplore.sensor import _pgm

EXPLORED_LEVEL = 0.95
TRAJECTORY_MARK = 64


@dataclass
class EpisodeRecord:
    map_id: str
    seed: int
    episode: int
    final_rho: float
    exploration_steps: int | None


@dataclass
class EvalReport:
    rows: list[EpisodeRecord] = field(default_factory=list)

    def aggregates(self) -> dict[str, dict[str, float]]:
        """Per map: mean / population std of final rho and of exploration steps (episodes that got there)."""
        out: dict[str, dict[str, float]] = {}
        for map_id in dict.fromkeys(r.map_id for r in self.rows):
            rows = [r for r in self.rows if r.map_id == map_id]
            rhos = np.array([r.final_rho for r in rows])
            steps = np.array([r.exploration_steps for r in rows if r.exploration_steps is not None], dtype=float)
            out[map_id] = {
                "episodes": len(rows),
                "rho_mean": float(rhos.mean()),
                "rho_std": float(rhos.std()),
                "steps_mean": float(steps.mean()) if steps.size else float("nan"),
                "steps_std": float(steps.std()) if steps.size else float("nan"),
                "reached": int(steps.size),
            }
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["map", "seed", "episode", "final_rho", "exploration_steps"])
        for r in self.rows:
            w.writerow([r.map_id, r.seed, r.episode, repr(r.final_rho), "" if r.exploration_steps is None else r.exploration_steps])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> EvalReport:
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            steps = rec["exploration_steps"]
            rows.append(
                EpisodeRecord(rec["map"], int(rec["seed"]), int(rec["episode"]), float(rec["final_rho"]), int(steps) if steps else None)
            )
        return cls(rows)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["map", "episodes", "rho_mean", "rho_std", "steps_mean", "steps_std", "reached"])
        for map_id, agg in self.aggregates().items():
            w.writerow([map_id] + [repr(v) if isinstance(v, float) else v for v in agg.values()])
        return buf.getvalue()


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, episode, 7]).generate_state(1, dtype=np.uint32)[0])


def run_episode(env: ExplorationEnv, policy: Callable, seed: int) -> EpisodeRecord:
    obs = env.reset(seed)
    reached = 0 if env.rho >= EXPLORED_LEVEL else None
    while True:
        a = policy(obs.maps[None], obs.aux[None], [env])[0]
        res = env.step(int(a))
        obs = res.obs
        if reached is None and env.rho >= EXPLORED_LEVEL:
            reached = env.steps
        if res.terminated or res.truncated:
            return EpisodeRecord(env.cfg.map_id, seed, 0, env.rho, reached)


def evaluate_maps(
    policy: Callable,
    env_configs: Mapping[str, EnvConfig],
    episodes: int = 20,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> EvalReport:
    """``episodes`` greedy episodes under each seed on every map, keyed (map, seed, episode)."""
    report = EvalReport()
    for map_id, cfg in env_configs.items():
        env = ExplorationEnv(cfg)
        for seed in seeds:
            for ep in range(episodes):
                rec = run_episode(env, policy, episode_seed(seed, ep))
                rec.map_id, rec.seed, rec.episode = map_id, seed, ep
                report.rows.append(rec)
    return report


def read_eval_log(text: str) -> list[dict[str, Any]]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "eval_index": int(rec["eval_index"]),
                "level": int(rec["level"]),
                "mean_rho": float(rec["mean_rho"]),
                "ema": float(rec["ema"]),
                "level_transitions": int(rec["level_transitions"]),
            }
        )
    return rows


def sample_efficiency(eval_rows: Iterable[Mapping[str, Any]], level: int, target: float = EXPLORED_LEVEL) -> int | None:
    """Transitions sampled on ``level`` when its eval EMA first reached ``target``; None if it never did."""
    for row in eval_rows:
        if int(row["level"]) == level and float(row["ema"]) >= target:
            return int(row["level_transitions"])
    return None


def aggregate_runs(reports: Sequence[Mapping[str, float | None]]) -> dict[str, tuple[float, float, int]]:
    """Mean and population std per metric across runs, skipping runs where a metric is absent."""
    if not reports:
        raise ValueError("need at least one report")
    keys = list(dict.fromkeys(k for r in reports for k in r))
    out = {}
    for k in keys:
        vals = np.array([r[k] for r in reports if r.get(k) is not None], dtype=float)
        out[k] = (float(vals.mean()), float(vals.std()), int(vals.size)) if vals.size else (float("nan"), float("nan"), 0)
    return out


def aggregate_csv(table: Mapping[str, tuple[float, float, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mean", "std", "n"])
    for k, (m, s, n) in table.items():
        w.writerow([k, repr(m), repr(s), n])
    return buf.getvalue()


def aggregate_text(table: Mapping[str, tuple[float, float, int]], scale: float = 1.0, digits: int = 1) -> str:
    width = max((len(k) for k in table), default=6)
    lines = []
    for k, (m, s, n) in table.items():
        lines.append(f"{k:<{width}}  {m / scale:.{digits}f} ± {s / scale:.{digits}f}  (n={n})")
    return "\n".join(lines) + "\n"


def _safe_random_action(env: ExplorationEnv, rng: np.random.Generator) -> int:
    a = int(rng.integers(3))
    if a == Action.FORWARD and apply_action(env.map, env.pose, Action.FORWARD).collided:
        a = int(rng.integers(1, 3))
    return a


def bench(env_cfg: EnvConfig, steps: int = 100_000, seed: int = 0) -> dict[str, float]:
    """Single-step latency of the simulator (scan, belief update and observation), resets excluded.

    Actions come from a random walk that never drives into a wall, so the
    timing covers long episodes rather than reset churn.
    """
    env = ExplorationEnv(env_cfg)
    rng = np.random.default_rng(seed)
    env.reset(seed)
    times = np.empty(steps)
    resets = 0
    clock = time.perf_counter
    for i in range(steps):
        a = _safe_random_action(env, rng)
        t0 = clock()
        res = env.step(a)
        times[i] = clock() - t0
        if res.terminated or res.truncated:
            env.reset()
            resets += 1
    return {
        "steps": steps,
        "resets": resets,
        "median_ms": float(np.median(times) * 1e3),
        "mean_ms": float(times.mean() * 1e3),
        "p90_ms": float(np.percentile(times, 90) * 1e3),
        "p99_ms": float(np.percentile(times, 99) * 1e3),
        "steps_per_sec": float(steps / times.sum()),
    }


def render_trajectory(base: GroundTruthMap | np.ndarray, trace: Sequence[Mapping[str, Any]], scale: int = 1) -> str:
    """PGM of a map or belief image with every cell in the trace painted ``TRAJECTORY_MARK``.

    ``base`` is a ground-truth map or an image already in 0/128/255 encoding.
    """
    if isinstance(base, GroundTruthMap):
        img = np.where(base.occupied, 255, 0).astype(np.int64)
    else:
        img = np.asarray(base, dtype=np.int64).copy()
    for row in trace:
        img[int(row["row"]), int(row["col"])] = TRAJECTORY_MARK
    if scale > 1:
        img = np.kron(img, np.ones((scale, scale), dtype=np.int64))
    return _pgm(img)


def read_pgm(text: str) -> np.ndarray:
    tokens = [t for line in text.splitlines() for t in line.split("#", 1)[0].split()]
    if tokens[0] != "P2":
        raise ValueError("only plain (P2) PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    vals = np.array([int(t) for t in tokens[4 : 4 + w * h]])
    return vals.reshape(h, w)
