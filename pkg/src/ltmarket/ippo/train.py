"""Independent PPO training loop."""

from __future__ import annotations

import json
import math
import time
import zlib
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..env import ActionLayout, MarketEnv
from ..scenario import Scenario
from .checkpoint import PolicySet, save_checkpoint
from .config import TrainConfig
from .policy import MultiDiscrete, init_params
from .ppo import AdamState, LossStats, adam_update, compute_targets, loss_and_grads
from .rollout import AgentTrajectory, collect_rollouts


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, agent: str, last_checkpoint: Path | None):
        super().__init__(f"non-finite loss for {agent} at iteration {iteration}; "
                         f"last good checkpoint: {last_checkpoint}")
        self.iteration, self.agent, self.last_checkpoint = iteration, agent, last_checkpoint


def agent_seed(seed: int, agent: str, *extra: int) -> list[int]:
    return [seed, zlib.crc32(agent.encode()), *extra]


def init_policy_set(scenario: Scenario, cfg: TrainConfig) -> PolicySet:
    env = MarketEnv(scenario, record_info=False)
    layout = env.layout
    params = {}
    for a in env.agents:
        s = int(np.random.SeedSequence(agent_seed(cfg.seed, a)).generate_state(1)[0])
        params[a] = init_params(env.observation_size, layout.cardinalities, cfg.hidden, s, cfg.head_gain)
    return PolicySet(scenario.tech_set_hash(), layout.to_dict(), env.observation_size, cfg.hidden, params,
                     {a: AdamState() for a in env.agents}, 0, cfg.to_dict())


def update_agent(params: dict[str, torch.Tensor], adam: AdamState, traj: AgentTrajectory, cfg: TrainConfig,
                 dist: MultiDiscrete, rng: np.random.Generator) -> tuple[dict[str, torch.Tensor], LossStats]:
    """Several epochs of minibatch steps on one agent's batch."""
    targets, adv = compute_targets(traj.rewards, traj.values, traj.dones, 0.0, cfg.gamma, cfg.gae_lambda)
    data = {
        "obs": torch.as_tensor(traj.obs), "masks": torch.as_tensor(traj.masks),
        "actions": torch.as_tensor(traj.actions), "logp": torch.as_tensor(traj.logp),
        "advantages": torch.as_tensor(adv), "targets": torch.as_tensor(targets),
    }
    n = len(traj)
    mb = cfg.minibatch_size or cfg.batch_size
    n_chunks = max(1, round(n / mb))
    stats = []
    for _ in range(cfg.epochs):
        for idx in np.array_split(rng.permutation(n), n_chunks):
            ti = torch.as_tensor(idx)
            batch = {k: v[ti] for k, v in data.items()}
            loss, grads, st = loss_and_grads(params, dist, batch, clip_eps=cfg.clip_eps,
                                             entropy_coef=cfg.entropy_coef, vf_coef=cfg.vf_coef,
                                             normalize_advantages=cfg.normalize_advantages)
            if not math.isfinite(float(loss)) or not all(torch.isfinite(g).all() for g in grads.values()):
                raise FloatingPointError("non-finite loss or gradient")
            params = adam_update(params, grads, adam, cfg.lr, cfg.adam_betas, cfg.adam_eps, cfg.max_grad_norm)
            stats.append(st)
    mean = LossStats(*(float(np.mean([getattr(s, f) for s in stats])) for f in LossStats.__dataclass_fields__))
    return params, mean


@dataclass
class TrainResult:
    policies: PolicySet
    checkpoints: list[Path] = field(default_factory=list)
    metrics_path: Path | None = None
    iterations: int = 0


def _metric_line(iteration: int, agent: str, returns: list[float], st: LossStats, steps: int) -> str:
    rec = {
        "iteration": iteration, "agent": agent, "mean_reward": float(np.mean(returns)),
        "min_reward": float(np.min(returns)), "max_reward": float(np.max(returns)),
        "policy_loss": st.policy_loss, "value_loss": st.value_loss, "entropy": st.entropy, "steps_sampled": steps,
    }
    return json.dumps(rec, sort_keys=True)


def train(scenario: Scenario, cfg: TrainConfig, out_dir: str | Path, start: PolicySet | None = None,
          on_iteration: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Collect, compute targets, update each agent independently; repeat.

    Writes ``metrics.jsonl`` (one line per agent per iteration) and
    ``ckpt_<iteration>.ltm`` files into ``out_dir``: every
    ``checkpoint_interval`` iterations and once at the end.  On divergence the
    parameters from before the failing update are saved and the error raised.
    """
    torch.set_num_threads(1)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ps = start or init_policy_set(scenario, cfg)
    ps.check_compatible(scenario)
    dist = MultiDiscrete(ActionLayout.from_scenario(scenario).cardinalities)
    result = TrainResult(ps, metrics_path=out / "metrics.jsonl")
    first = ps.iteration
    t0 = time.monotonic()
    with open(result.metrics_path, "a" if start else "w") as log:
        for it in range(first + 1, first + cfg.iterations + 1):
            if cfg.time_budget_s is not None and time.monotonic() - t0 > cfg.time_budget_s:
                break
            batches, episodes = collect_rollouts(scenario, ps.numpy_params(), cfg.batch_size, seed=cfg.seed,
                                                 iteration=it, workers=cfg.workers)
            summary, lines = {}, []
            # tensors are replaced, never mutated, so shallow copies make a snapshot
            good = ({a: dict(p) for a, p in ps.params.items()},
                    {a: AdamState(dict(st.m), dict(st.v), st.step) for a, st in ps.adam.items()})
            for a in sorted(batches):
                rng = np.random.default_rng(agent_seed(cfg.seed, a, it))
                try:
                    ps.params[a], st = update_agent(ps.params[a], ps.adam[a], batches[a], cfg, dist, rng)
                except FloatingPointError:
                    ps.params, ps.adam = good
                    path = save_checkpoint(ps, out / f"ckpt_{ps.iteration:06d}.ltm")
                    raise TrainingDiverged(it, a, path) from None
                returns = [ep.returns[a] for ep in episodes]
                lines.append(_metric_line(it, a, returns, st, len(batches[a])))
                summary[a] = float(np.mean(returns))
            log.write("".join(line + "\n" for line in lines))
            log.flush()
            ps.iteration = it
            result.iterations = it - first
            if on_iteration:
                on_iteration(it, summary)
            if cfg.checkpoint_interval and it % cfg.checkpoint_interval == 0:
                result.checkpoints.append(save_checkpoint(ps, out / f"ckpt_{it:06d}.ltm"))
    final = out / f"ckpt_{ps.iteration:06d}.ltm"
    if not result.checkpoints or result.checkpoints[-1] != final:
        result.checkpoints.append(save_checkpoint(ps, final))
    return result
