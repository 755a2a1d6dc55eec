"""Independent brute-force references shared by unit and acceptance tests."""

import itertools
import math

import numpy as np


def cheapest_dispatch_cost(bids, demand):
    """Minimum cost of serving min(demand, supply) by trying every fill order."""
    best = math.inf
    for order in itertools.permutations(range(len(bids))):
        left, cost = demand, 0.0
        for i in order:
            take = min(bids[i][0], left)
            cost += take * bids[i][1]
            left -= take
        best = min(best, cost)
    return best if bids else 0.0


def price_oracle(bids, demand, voll):
    """Lowest price level whose cumulative supply covers demand."""
    if demand <= 0:
        return 0.0
    for level in sorted({p for _, p in bids}):
        if sum(q for q, p in bids if p <= level) >= demand - 1e-9:
            return level
    return voll


def auction_oracle(bids, target):
    """Lowest clearing price over every lumpy acceptance that covers the target."""
    live = [b for b in bids if b.amount > 0 and b.quantity > 0]
    best = None
    for r in range(1, len(live) + 1):
        for subset in itertools.combinations(live, r):
            if sum(b.amount for b in subset) >= target - 1e-9:
                price = max(b.price for b in subset)
                best = price if best is None else min(best, price)
    if best is None and live:
        best = max(b.price for b in live)  # nothing covers: take everything
    return best


def n_step_targets(rewards, dones, last_value, gamma):
    """Full-return targets: discounted rewards to the episode end, bootstrapped if cut."""
    n = len(rewards)
    out = np.zeros(n)
    for t in range(n):
        g, k, disc = 0.0, t, 1.0
        while True:
            g += disc * rewards[k]
            if dones[k]:
                break
            if k == n - 1:
                g += disc * gamma * last_value
                break
            disc *= gamma
            k += 1
        out[t] = g
    return out


def finite_difference_grads(loss_fn, params, h=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of every tensor in ``params``."""
    out = {}
    for name, p in params.items():
        fd = np.zeros(p.numel())
        flat = p.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            fd[i] = (up - down) / (2 * h)
        out[name] = fd.reshape(tuple(p.shape))
    return out
