"""Experience collection over independent environment instances.

Each episode owns its environment and RNG streams, both derived from the
episode seed, so a batch is the same whatever the number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from ..env import MarketEnv
from ..scenario import Scenario
from .policy import MultiDiscrete, actor_log_probs, sample_actions, value


@dataclass
class AgentTrajectory:
    obs: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class Episode:
    seed: int
    trajectories: dict[str, AgentTrajectory]
    infos: list[dict] = field(default_factory=list)

    @property
    def returns(self) -> dict[str, float]:
        return {a: float(tr.rewards.sum()) for a, tr in self.trajectories.items()}


class EpisodeError(RuntimeError):
    def __init__(self, seed: int, step: int, cause: Exception):
        super().__init__(f"episode seed {seed}, step {step}: {cause}")
        self.seed, self.step = seed, step


def _as_tensors(params: dict) -> dict[str, torch.Tensor]:
    return {k: torch.as_tensor(v) for k, v in params.items()}


def run_episode(scenario: Scenario, policies: dict[str, dict], seed: int, record: bool = False,
                greedy: bool = False, episode_id: int = 0) -> Episode:
    """Play one episode with every agent sampling from its own policy."""
    torch.set_num_threads(1)
    env = MarketEnv(scenario, record_info=record)
    missing = set(env.agents) - set(policies)
    if missing:
        raise KeyError(f"no policy for agents {sorted(missing)}")
    nets = {a: _as_tensors(policies[a]) for a in env.agents}
    dist = MultiDiscrete(env.layout.cardinalities)
    rng = np.random.default_rng([seed, 7])
    buf = {a: {k: [] for k in ("obs", "actions", "masks", "logp", "rewards", "values")} for a in env.agents}
    out = env.reset(seed)
    infos = []
    with torch.no_grad():
        while True:
            actions = {}
            for a in env.agents:
                o = torch.as_tensor(out.observations[a]).unsqueeze(0)
                m = torch.as_tensor(out.masks[a]).unsqueeze(0)
                lp = actor_log_probs(nets[a], dist, o, m)
                act = lp[0].argmax(-1).numpy() if greedy else sample_actions(rng, lp[0].numpy())
                b = buf[a]
                b["obs"].append(out.observations[a])
                b["masks"].append(out.masks[a])
                b["actions"].append(act)
                b["logp"].append(float(dist.joint_log_prob(lp, torch.as_tensor(act).unsqueeze(0))[0]))
                b["values"].append(float(value(nets[a], o)[0]))
                actions[a] = act
            try:
                out = env.step(actions)
            except Exception as exc:  # surface with episode context
                raise EpisodeError(seed, env.t, exc) from exc
            for a in env.agents:
                buf[a]["rewards"].append(out.rewards[a])
            if record:
                infos.append(out.info)
            if out.done:
                break
    n = env.t
    trajs = {}
    for a, b in buf.items():
        dones = np.zeros(n, dtype=bool)
        dones[-1] = True
        trajs[a] = AgentTrajectory(
            obs=np.asarray(b["obs"]), actions=np.asarray(b["actions"], dtype=np.int64),
            masks=np.asarray(b["masks"]), logp=np.asarray(b["logp"]), rewards=np.asarray(b["rewards"]),
            values=np.asarray(b["values"]), dones=dones, episode_ids=np.full(n, episode_id),
        )
    return Episode(seed, trajs, infos)


def episode_seeds(seed: int, iteration: int, count: int) -> list[int]:
    ss = np.random.SeedSequence([seed, iteration])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


def _job(args):
    return run_episode(*args)


def run_episodes(scenario: Scenario, policies: dict[str, dict], seeds: list[int], workers: int = 1,
                 record: bool = False, greedy: bool = False) -> list[Episode]:
    jobs = [(scenario, policies, s, record, greedy, i) for i, s in enumerate(seeds)]
    if workers <= 1 or len(jobs) <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def collect_rollouts(scenario: Scenario, policies: dict[str, dict], batch_size: int, seeds: list[int] | None = None,
                     seed: int = 0, iteration: int = 0, workers: int = 1) -> tuple[dict[str, AgentTrajectory], list[Episode]]:
    """Whole episodes until every agent has at least ``batch_size`` steps."""
    n_eps = max(1, math.ceil(batch_size / scenario.episode_steps))
    seeds = seeds if seeds is not None else episode_seeds(seed, iteration, n_eps)
    episodes = run_episodes(scenario, policies, seeds, workers)
    batches = {}
    for a in episodes[0].trajectories:
        parts = [ep.trajectories[a] for ep in episodes]
        batches[a] = AgentTrajectory(*(np.concatenate([getattr(p, f) for p in parts])
                                       for f in AgentTrajectory.__dataclass_fields__))
    return batches, episodes
