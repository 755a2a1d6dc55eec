"""Actor and critic networks over masked multi-discrete actions.

Parameters live in a flat ``dict[str, Tensor]`` so gradients, optimizer state
and checkpoints can all be keyed by name.  Actor and critic share nothing.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
import torch

MASKED_LOGIT = -1e9
DTYPE = torch.float64


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(obs_dim: int, cardinalities: Sequence[int], hidden: Sequence[int], seed: int,
                head_gain: float = 0.01) -> dict[str, torch.Tensor]:
    """Orthogonal weights (gain sqrt(2) on hidden layers), zero biases."""
    rng = np.random.default_rng(seed)
    out: dict[str, torch.Tensor] = {}
    for net, width_out, gain_out in (("actor", int(sum(cardinalities)), head_gain), ("critic", 1, 1.0)):
        sizes = [obs_dim, *hidden]
        for i in range(len(hidden)):
            w = _orthogonal(rng, sizes[i + 1], sizes[i], np.sqrt(2.0))
            out[f"{net}.{i}.weight"] = torch.tensor(w, dtype=DTYPE)
            out[f"{net}.{i}.bias"] = torch.zeros(sizes[i + 1], dtype=DTYPE)
        w = _orthogonal(rng, width_out, sizes[-1], gain_out) if gain_out else np.zeros((width_out, sizes[-1]))
        out[f"{net}.head.weight"] = torch.tensor(w, dtype=DTYPE)
        out[f"{net}.head.bias"] = torch.zeros(width_out, dtype=DTYPE)
    return out


def n_hidden_layers(params: dict[str, torch.Tensor], net: str) -> int:
    return sum(1 for k in params if k.startswith(f"{net}.") and k.endswith(".weight")) - 1


def _mlp(params: dict[str, torch.Tensor], net: str, x: torch.Tensor) -> torch.Tensor:
    for i in range(n_hidden_layers(params, net)):
        x = torch.tanh(x @ params[f"{net}.{i}.weight"].T + params[f"{net}.{i}.bias"])
    return x @ params[f"{net}.head.weight"].T + params[f"{net}.head.bias"]


def value(params: dict[str, torch.Tensor], obs: torch.Tensor) -> torch.Tensor:
    return _mlp(params, "critic", obs).squeeze(-1)


class MultiDiscrete:
    """Index helper that pads per-dimension logits into a (dims, max_card) grid."""

    def __init__(self, cardinalities: Sequence[int]):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.n_dims = len(self.cardinalities)
        self.width = max(self.cardinalities)
        self.total = sum(self.cardinalities)
        dim_idx = np.repeat(np.arange(self.n_dims), self.cardinalities)
        pos_idx = np.concatenate([np.arange(c) for c in self.cardinalities])
        self.flat_to_grid = torch.as_tensor(dim_idx * self.width + pos_idx)

    def log_probs(self, logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """(B, total) logits and boolean mask -> (B, dims, width) log-probabilities.

        Masked entries and padding get a logit of -1e9, so their probability
        underflows to exactly zero.
        """
        mask = mask.to(torch.bool)
        batch = logits.shape[0]
        grid_mask = torch.zeros(batch, self.n_dims * self.width, dtype=torch.bool)
        grid_mask[:, self.flat_to_grid] = mask
        grid_mask = grid_mask.view(batch, self.n_dims, self.width)
        if not bool(grid_mask.any(-1).all()):
            bad = (~grid_mask.any(-1)).nonzero()[0].tolist()
            raise ValueError(f"all indices masked in dimension {bad[1]} (row {bad[0]})")
        grid = torch.full((batch, self.n_dims * self.width), MASKED_LOGIT, dtype=logits.dtype)
        grid[:, self.flat_to_grid] = logits
        grid = grid.view(batch, self.n_dims, self.width)
        grid = torch.where(grid_mask, grid, torch.full_like(grid, MASKED_LOGIT))
        return torch.log_softmax(grid, dim=-1)

    @staticmethod
    def joint_log_prob(log_probs: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        return log_probs.gather(-1, actions.long().unsqueeze(-1)).squeeze(-1).sum(-1)

    @staticmethod
    def entropy(log_probs: torch.Tensor) -> torch.Tensor:
        """Sum over dimensions of per-dimension entropies."""
        p = log_probs.exp()
        return -(p * log_probs).sum(-1).sum(-1)


def actor_log_probs(params: dict[str, torch.Tensor], dist: MultiDiscrete, obs: torch.Tensor,
                    mask: torch.Tensor) -> torch.Tensor:
    return dist.log_probs(_mlp(params, "actor", obs), mask)


def sample_actions(rng: np.random.Generator, log_probs: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per dimension from (dims, width) log-probabilities."""
    cdf = np.cumsum(np.exp(log_probs), axis=-1)
    u = rng.random(cdf.shape[0]) * cdf[:, -1]
    # the first index whose cdf exceeds u always carries positive probability
    return (cdf <= u[:, None]).sum(-1)
