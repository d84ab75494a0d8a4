"""Clipped-surrogate PPO with GAE over a growing pool of environments."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from gridexplore.curriculum import CurriculumMode, StageState, evaluate_policy, on_switch, should_switch
from gridexplore.encoder import rotate_batch
from gridexplore.env import EnvConfig, ExplorationEnv
from gridexplore.neuralnet import Categorical, Params, backward, forward, init_params, save_checkpoint
from gridexplore.policies import GreedyPolicy
from gridexplore.vecenv import VecEnv

if TYPE_CHECKING:
    from gridexplore.config import RunConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatches: int = 4
    rollout_len: int = 128
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    learning_rate: float = 2.5e-4
    max_grad_norm: float = 0.5
    augment: bool = True
    adam_eps: float = 1e-5
    # network arithmetic during training; float32 trades precision for ~1.4x speed
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not 0 < self.gamma <= 1 or not 0 <= self.gae_lambda <= 1 or self.clip_eps <= 0:
            raise ValueError("need 0 < gamma <= 1, 0 <= gae_lambda <= 1, clip_eps > 0")


@dataclass
class RolloutBuffer:
    """Arrays are indexed [t, slot]."""

    maps: np.ndarray
    aux: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    levels: np.ndarray
    bootstrap: np.ndarray
    final_rhos: list[float] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rewards.size


def collect_rollout(
    vecenv: VecEnv,
    params: Params,
    rng: np.random.Generator,
    rollout_len: int,
    obs: list,
) -> tuple[RolloutBuffer, list]:
    """Step the pool ``rollout_len`` times with the stochastic policy.

    ``obs`` holds the current observation of every slot; the observations
    after the last step are returned for the next call. ``bootstrap[t, s]``
    is the value of the true successor state wherever the GAE recursion needs
    it from outside the buffer: at the last step and at truncations.
    """
    n = len(vecenv)
    if n == 0:
        raise ValueError("empty environment pool")
    T = rollout_len
    maps = np.empty((T, n) + obs[0].maps.shape)
    aux = np.empty((T, n) + obs[0].aux.shape)
    actions = np.empty((T, n), dtype=np.int64)
    log_probs = np.empty((T, n))
    rewards = np.empty((T, n))
    values = np.empty((T, n))
    terminated = np.zeros((T, n), dtype=bool)
    truncated = np.zeros((T, n), dtype=bool)
    bootstrap = np.zeros((T, n))
    levels = np.tile(np.asarray(vecenv.level_of, dtype=np.int64), (T, 1))
    final_rhos: list[float] = []
    for t in range(T):
        maps[t] = np.stack([o.maps for o in obs])
        aux[t] = np.stack([o.aux for o in obs])
        logits, v, _ = forward(params, maps[t], aux[t])
        dist = Categorical(logits)
        a = dist.sample(rng)
        actions[t] = a
        log_probs[t] = dist.log_prob(a)
        values[t] = v
        results = vecenv.step_batch(a.tolist())
        trunc_slots = []
        for s, res in enumerate(results):
            rewards[t, s] = res.reward
            terminated[t, s] = res.terminated
            truncated[t, s] = res.truncated
            if res.terminated or res.truncated:
                final_rhos.append(res.info["final_rho"])
            if res.truncated:
                trunc_slots.append(s)
        if trunc_slots:
            fm = np.stack([results[s].info["final_obs"].maps for s in trunc_slots])
            fa = np.stack([results[s].info["final_obs"].aux for s in trunc_slots])
            _, fv, _ = forward(params, fm, fa)
            bootstrap[t, trunc_slots] = fv
        obs = [res.obs for res in results]
    _, last_v, _ = forward(params, np.stack([o.maps for o in obs]), np.stack([o.aux for o in obs]))
    open_end = ~(terminated[-1] | truncated[-1])
    bootstrap[-1, open_end] = last_v[open_end]
    buf = RolloutBuffer(maps, aux, actions, log_probs, rewards, values, terminated, truncated, levels, bootstrap, final_rhos)
    return buf, obs


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    terminated: np.ndarray,
    truncated: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    lam: float,
) -> tuple[np.ndarray, np.ndarray]:
    """GAE over [t, slot] arrays.

    The successor value is ``values[t + 1]`` inside an episode and
    ``bootstrap[t]`` at the last step or a truncation; terminations have no
    successor. The advantage recursion restarts after any episode end,
    because the next row already belongs to a fresh episode.
    """
    rewards = np.asarray(rewards, dtype=float)
    shapes = {np.shape(a) for a in (rewards, values, terminated, truncated, bootstrap)}
    if len(shapes) != 1:
        raise ValueError(f"length mismatch: {shapes}")
    if rewards.ndim == 1:
        adv, ret = compute_gae(*(np.asarray(a)[:, None] for a in (rewards, values, terminated, truncated, bootstrap)), gamma, lam)
        return adv[:, 0], ret[:, 0]
    T = rewards.shape[0]
    term = np.asarray(terminated, dtype=bool)
    done = term | np.asarray(truncated, dtype=bool)
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        if t == T - 1:
            nxt = bootstrap[t]
        else:
            nxt = np.where(truncated[t], bootstrap[t], values[t + 1])
        delta = rewards[t] + gamma * nxt * (~term[t]) - values[t]
        last = delta + gamma * lam * (~done[t]) * last
        adv[t] = last
    return adv, adv + values


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Zero mean, unit std over the whole batch (all levels jointly)."""
    return (adv - adv.mean()) / (adv.std() + eps)


class Adam:
    def __init__(self, params: Params, lr: float, eps: float = 1e-5, betas: tuple[float, float] = (0.9, 0.999)):
        self.lr = lr
        self.eps = eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_grad_norm(grads: Params, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads.values():
            g *= scale
    return norm


def ppo_loss_and_grad(
    params: Params,
    maps: np.ndarray,
    aux: np.ndarray,
    actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: PPOConfig,
) -> tuple[float, Params, dict[str, Any]]:
    logits, values, cache = forward(params, maps, aux)
    dist = Categorical(logits)
    logp = dist.log_prob(actions)
    ratio = np.exp(logp - old_log_probs)
    clipped = np.clip(ratio, 1 - cfg.clip_eps, 1 + cfg.clip_eps)
    surr1 = ratio * advantages
    surr2 = clipped * advantages
    n = len(actions)
    policy_loss = -np.minimum(surr1, surr2).mean()
    value_loss = ((values - returns) ** 2).mean()
    entropy = dist.entropy().mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    # the min picks the clipped branch only where it is strictly smaller; there its gradient is zero
    use_unclipped = surr1 <= surr2
    dlogp = np.where(use_unclipped, -surr1 / n, 0.0)
    dlogits = dlogp[:, None] * dist.grad_log_prob(actions) - (cfg.entropy_coef / n) * dist.grad_entropy()
    dvalues = cfg.value_coef * 2.0 * (values - returns) / n
    dt = params["pi_w"].dtype
    grads = backward(params, cache, dlogits.astype(dt, copy=False), dvalues.astype(dt, copy=False))
    stats = {
        "loss": float(loss),
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy),
        "clip_frac": float((np.abs(ratio - 1) > cfg.clip_eps).mean()),
        "approx_kl": float(((ratio - 1) - np.log(ratio)).mean()),
        "ratio": ratio,
    }
    return float(loss), grads, stats


def ppo_update(
    params: Params,
    buf: RolloutBuffer,
    cfg: PPOConfig,
    rng: np.random.Generator,
    optimizer: Adam,
) -> tuple[Params, dict[str, float]]:
    """Several epochs of minibatch updates on one rollout; ``params`` is updated in place."""
    adv, returns = compute_gae(buf.rewards, buf.values, buf.terminated, buf.truncated, buf.bootstrap, cfg.gamma, cfg.gae_lambda)
    level_adv = {int(lv): float(adv[buf.levels == lv].mean()) for lv in np.unique(buf.levels)}
    n = buf.size
    flat = lambda a: a.reshape((n,) + a.shape[2:])  # noqa: E731
    maps, aux = flat(buf.maps), flat(buf.aux)
    actions, old_lp = flat(buf.actions), flat(buf.log_probs)
    adv, returns = flat(adv), flat(returns)
    adv = normalize_advantages(adv)
    mb_size = max(1, n // cfg.minibatches)
    totals: dict[str, float] = {}
    count = 0
    first_ratio_dev = None
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb_size):
            idx = order[start : start + mb_size]
            m, a_x = maps[idx], aux[idx]
            act, olp, ad, ret = actions[idx], old_lp[idx], adv[idx], returns[idx]
            if cfg.augment:
                ks = rng.integers(1, 4, size=len(idx))
                rm, ra = rotate_batch(m, a_x, ks)
                m = np.concatenate([m, rm])
                a_x = np.concatenate([a_x, ra])
                act, olp = np.concatenate([act, act]), np.concatenate([olp, olp])
                ad, ret = np.concatenate([ad, ad]), np.concatenate([ret, ret])
            loss, grads, st = ppo_loss_and_grad(params, m, a_x, act, olp, ad, ret, cfg)
            if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
                raise FloatingPointError(
                    f"non-finite PPO loss {loss}: policy={st['policy_loss']} value={st['value_loss']} "
                    f"entropy={st['entropy']} max|adv|={np.abs(ad).max()}"
                )
            if first_ratio_dev is None:
                first_ratio_dev = float(np.abs(st["ratio"][: len(idx)] - 1).max())
            st["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            optimizer.step(params, grads)
            for k, v in st.items():
                if k != "ratio":
                    totals[k] = totals.get(k, 0.0) + v
            count += 1
    stats = {k: v / count for k, v in totals.items()}
    stats["initial_ratio_dev"] = first_ratio_dev
    stats["level_adv_mean"] = level_adv
    return params, stats


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, purpose]))


EVAL_FIELDS = ["eval_index", "level", "mean_rho", "ema", "level_transitions", "total_transitions", "update"]
STAGE_FIELDS = ["stage", "level", "total_transitions", "pool_size", "slot_levels", "wall_clock"]


def metrics_fields(levels: list[int]) -> list[str]:
    return (
        ["update", "total_transitions", "vec_steps", "stage", "level", "pool_size"]
        + [f"trans_L{lv}" for lv in levels]
        + ["policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl", "mean_episode_rho"]
        + [f"eval_L{lv}" for lv in levels]
        + [f"ema_L{lv}" for lv in levels]
    )


def _fmt(v: Any) -> Any:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def train(cfg: RunConfig, seed: int | None = None, out_dir: str | Path | None = None) -> dict[str, Any]:
    """Run one curriculum training job and write its artefacts to ``out_dir``.

    Files: ``metrics.csv`` (one row per update), ``evals.csv``,
    ``stages.csv`` (with wall clock), ``checkpoint_init.ckpt``,
    ``checkpoint_stage<i>.ckpt`` at every switch and ``checkpoint_final.ckpt``.
    """
    seed = cfg.seeds[0] if seed is None else seed
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = CurriculumMode(cfg.mode)
    levels = list(cfg.levels)
    K = len(levels)
    pcfg: PPOConfig = cfg.ppo
    ccfg = cfg.curriculum

    def make_env(level: int) -> ExplorationEnv:
        return ExplorationEnv(cfg.env_config(level))

    params = init_params(_stream(seed, 0), (2, cfg.encoder.H, cfg.encoder.W), cfg.lidar.beam_count + 1)
    params = {k: v.astype(pcfg.dtype) for k, v in params.items()}
    optimizer = Adam(params, pcfg.learning_rate, pcfg.adam_eps)
    save_checkpoint(params, out / "checkpoint_init.ckpt")
    act_rng, upd_rng, eval_rng = _stream(seed, 1), _stream(seed, 2), _stream(seed, 3)

    stage_idx = K - 1 if mode == CurriculumMode.FLAT else 0
    stage = StageState(current_level=levels[stage_idx], tau=ccfg.tau)
    for lv in levels:
        stage.transitions_per_level[lv] = 0
    vec = VecEnv(master_seed=seed, workers=cfg.workers)
    initial = levels if mode == CurriculumMode.FLAT else levels[:1]
    for lv in initial:
        vec.add_envs([make_env(lv) for _ in range(cfg.N)], lv, reset=False)
    experienced = list(initial)

    metrics_f = open(out / "metrics.csv", "w", newline="")
    evals_f = open(out / "evals.csv", "w", newline="")
    stages_f = open(out / "stages.csv", "w", newline="")
    mw = csv.DictWriter(metrics_f, metrics_fields(levels), lineterminator="\n")
    ew = csv.DictWriter(evals_f, EVAL_FIELDS, lineterminator="\n")
    sw = csv.DictWriter(stages_f, STAGE_FIELDS, lineterminator="\n")
    for w in (mw, ew, sw):
        w.writeheader()
    t_start = time.perf_counter()

    def log_stage() -> None:
        counts = {lv: vec.level_of.count(lv) for lv in sorted(set(vec.level_of))}
        sw.writerow(
            {
                "stage": stage_idx + 1,
                "level": stage.current_level,
                "total_transitions": total,
                "pool_size": len(vec),
                "slot_levels": " ".join(f"{lv}:{c}" for lv, c in counts.items()),
                "wall_clock": f"{time.perf_counter() - t_start:.3f}",
            }
        )
        stages_f.flush()
        log.info("stage %d: level %d, %d transitions, pool %s", stage_idx + 1, stage.current_level, total, counts)

    total = 0
    vec_steps = 0
    update = 0
    eval_index = 0
    since_eval = 0
    status = "budget_exhausted"
    log_stage()
    try:
        if cfg.transition_budget <= 0:
            return {"status": status, "total_transitions": 0, "updates": 0, "out_dir": str(out)}
        obs = vec.reset_all()
        while total < cfg.transition_budget:
            buf, obs = collect_rollout(vec, params, act_rng, pcfg.rollout_len, obs)
            total += buf.size
            vec_steps += pcfg.rollout_len
            for lv, c in zip(*np.unique(buf.levels, return_counts=True)):
                stage.transitions_per_level[int(lv)] += int(c)
                if int(lv) == stage.current_level:
                    since_eval += int(c)
            _, stats = ppo_update(params, buf, pcfg, upd_rng, optimizer)
            update += 1
            row: dict[str, Any] = {
                "update": update,
                "total_transitions": total,
                "vec_steps": vec_steps,
                "stage": stage_idx + 1,
                "level": stage.current_level,
                "pool_size": len(vec),
                "mean_episode_rho": float(np.mean(buf.final_rhos)) if buf.final_rhos else "",
            }
            for lv in levels:
                row[f"trans_L{lv}"] = stage.transitions_per_level[lv]
            for k in ("policy_loss", "value_loss", "entropy", "clip_frac", "approx_kl"):
                row[k] = stats[k]
            switch_to = None
            if since_eval >= ccfg.eval_every:
                since_eval = 0
                eval_index += 1
                n_eval = len(experienced) * ccfg.eval_episodes
                seeds = [int(s) for s in eval_rng.integers(0, 2**31 - 1, size=n_eval)]
                result = evaluate_policy(GreedyPolicy(params), experienced, ccfg.eval_episodes, make_env, seeds, stage)
                for lv, rho in result.items():
                    ema = stage.ema[lv].value
                    row[f"eval_L{lv}"] = rho
                    row[f"ema_L{lv}"] = ema
                    ew.writerow(
                        {
                            "eval_index": eval_index,
                            "level": lv,
                            "mean_rho": _fmt(rho),
                            "ema": _fmt(ema),
                            "level_transitions": stage.transitions_per_level[lv],
                            "total_transitions": total,
                            "update": update,
                        }
                    )
                evals_f.flush()
                if should_switch(stage, ccfg.window, ccfg.threshold):
                    if stage_idx == K - 1 or mode == CurriculumMode.FLAT:
                        if stage.ema[stage.current_level].value >= ccfg.final_ema:
                            status = "converged"
                    else:
                        switch_to = levels[stage_idx + 1]
            mw.writerow({k: _fmt(v) for k, v in row.items()})
            metrics_f.flush()
            if status == "converged":
                break
            if switch_to is not None:
                save_checkpoint(params, out / f"checkpoint_stage{stage_idx + 1}.ckpt")
                new_obs = on_switch(mode, vec, switch_to, cfg.N, make_env, max(levels))
                obs = new_obs if mode == CurriculumMode.CL else obs + new_obs
                stage_idx += 1
                stage.advance(switch_to)
                since_eval = 0
                experienced.append(switch_to)
                log_stage()
        save_checkpoint(params, out / "checkpoint_final.ckpt")
    finally:
        vec.close()
        for f in (metrics_f, evals_f, stages_f):
            f.close()
    return {"status": status, "total_transitions": total, "updates": update, "out_dir": str(out)}
