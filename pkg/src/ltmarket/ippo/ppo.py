"""Advantage targets, clipped surrogate loss and the adaptive-moment update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .policy import MultiDiscrete, actor_log_probs, value


def compute_targets(rewards, values, dones, last_value: float = 0.0, gamma: float = 1.0,
                    lam: float = 0.995) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) over a contiguous trajectory.

    ``dones[t]`` marks that step t ended an episode, so nothing is
    bootstrapped past it.  ``last_value`` is V(s_T) for a trajectory cut
    mid-episode.  Returns (value targets, advantages).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    n = len(r)
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = v[t]
    return adv + v, adv


@dataclass
class LossStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float


def ppo_loss(params: dict[str, torch.Tensor], dist: MultiDiscrete, batch: dict[str, torch.Tensor],
             clip_eps: float, entropy_coef: float, vf_coef: float,
             normalize_advantages: bool = True) -> tuple[torch.Tensor, LossStats]:
    """-L_clip - h * entropy + v * MSE(value, target), averaged over the minibatch."""
    logp = actor_log_probs(params, dist, batch["obs"], batch["masks"])
    new_lp = dist.joint_log_prob(logp, batch["actions"])
    ratio = torch.exp(new_lp - batch["logp"])
    adv = batch["advantages"]
    if normalize_advantages and adv.numel() > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    surr = torch.minimum(ratio * adv, torch.clamp(ratio, 1 - clip_eps, 1 + clip_eps) * adv)
    l_clip = surr.mean()
    ent = dist.entropy(logp).mean()
    l_vf = ((value(params, batch["obs"]) - batch["targets"]) ** 2).mean()
    loss = -l_clip - entropy_coef * ent + vf_coef * l_vf
    clipped = ((ratio - 1).abs() > clip_eps).double().mean()
    return loss, LossStats(-l_clip.item(), l_vf.item(), ent.item(), clipped.item())


def loss_and_grads(params, dist, batch, **kw):
    leaves = {k: p.detach().clone().requires_grad_(True) for k, p in params.items()}
    loss, stats = ppo_loss(leaves, dist, batch, **kw)
    grads = torch.autograd.grad(loss, list(leaves.values()), allow_unused=True)
    out = {k: (g if g is not None else torch.zeros_like(params[k])) for k, g in zip(leaves, grads)}
    return loss.detach(), out, stats


@dataclass
class AdamState:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0


def adam_update(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState,
                lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                max_grad_norm: float | None = None) -> dict[str, torch.Tensor]:
    """One adaptive-moment descent step.  Returns new tensors, updates ``state``."""
    if max_grad_norm is not None:
        norm = torch.sqrt(sum((g ** 2).sum() for g in grads.values()))
        if norm > max_grad_norm:
            grads = {k: g * (max_grad_norm / norm) for k, g in grads.items()}
    b1, b2 = betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    out = {}
    for k, p in params.items():
        g = grads[k]
        m = state.m.get(k, torch.zeros_like(p)) * b1 + (1 - b1) * g
        v = state.v.get(k, torch.zeros_like(p)) * b2 + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        out[k] = p - lr * (m / c1) / (torch.sqrt(v / c2) + eps)
    return out
