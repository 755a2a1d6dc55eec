"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line through ``record_criterion``; the lines are
printed together at the end of the pytest run.  Run just this file with
``pytest tests/test_acceptance.py -v``.  The training fixture takes a few
minutes on one core.
"""

import math
import time

import numpy as np
import pytest
import torch

from builders import BASE, TOY, toy
from oracles import auction_oracle, cheapest_dispatch_cost, finite_difference_grads, n_step_targets, price_oracle
from ltmarket.cli import main
from ltmarket.env import MarketEnv, MaskViolation, absorbing_payment, compute_reward, ledger_totals, random_actions
from ltmarket.evaluation import compute_hhi, compute_irr, run_league
from ltmarket.ippo import (
    MultiDiscrete, collect_rollouts, compute_targets, init_params, init_policy_set, ppo_loss, preset, train,
)
from ltmarket.ippo.policy import actor_log_probs, sample_actions
from ltmarket.ippo.ppo import loss_and_grads
from ltmarket.ippo.train import update_agent
from ltmarket.longterm import (
    AuctionBid, premium_term, reliability_option_term, run_auction, settle_asset, settle_cm, settle_merchant,
)
from ltmarket.market import Asset, clear_hour
from ltmarket.scenario import availability_probabilities, load_scenario, make_technology, sample_availability

VOLL = 4000.0
TRAIN_SEEDS = range(5)


# 1: hourly clearing --------------------------------------------------------------------------


def test_criterion_1_hourly_clearing(record_criterion):
    rng = np.random.default_rng(1)
    levels = np.array([0.0, 5.0, 10.0, 30.0, 50.0, 80.0, 300.0])
    instances = []
    for _ in range(1000):
        n = int(rng.integers(0, 7))
        q = rng.uniform(0, 200, n).round(rng.integers(0, 3))
        p = np.where(rng.random(n) < 0.7, rng.choice(levels, n), rng.uniform(0, 400, n))
        instances.append(([(float(a), float(b)) for a, b in zip(q, p)], float(rng.uniform(0, 800))))

    t0 = time.perf_counter()
    results = [clear_hour(bids, demand, VOLL) for bids, demand in instances]
    elapsed = time.perf_counter() - t0

    bad = 0
    for (bids, demand), res in zip(instances, results):
        served = min(demand, sum(q for q, _ in bids))
        cost = float(sum(d * p for d, (_, p) in zip(res.dispatched, bids)))
        ok = (res.price == price_oracle(bids, demand, VOLL)
              and abs(float(res.dispatched.sum()) - served) <= 1e-9 * max(1.0, served)
              and math.isclose(cost, cheapest_dispatch_cost(bids, demand), rel_tol=1e-9, abs_tol=1e-6))
        bad += not ok
    ok = record_criterion(1, bad == 0 and elapsed < 5.0,
                          f"clear_hour vs brute force: {1000 - bad}/1000 match, {elapsed:.2f} s")
    assert ok


# 2: lumpy auctions ---------------------------------------------------------------------------


def test_criterion_2_lumpy_auction(record_criterion):
    rng = np.random.default_rng(2)
    ceiling = 200.0
    bad = 0
    for _ in range(1000):
        bids = []
        for _ in range(int(rng.integers(0, 7))):
            price = float(rng.integers(0, 11) * 20.0) if rng.random() < 0.6 else float(rng.uniform(0, ceiling))
            qty = float(rng.choice([0.0, 10.0, 20.0, 30.0]))
            contrib = None if rng.random() < 0.5 else float(rng.uniform(0.5, 30))
            bids.append(AuctionBid(str(rng.choice(["a", "b", "c"])), str(rng.choice(["solar", "ccgt"])),
                                   qty, price, contrib))
        target = float(rng.uniform(1, 100))
        res = run_auction(bids, target, ceiling, "marginal")
        ok = res.clearing_price == auction_oracle(bids, target)
        if res.clearing_price is not None:
            ok &= res.clearing_price <= ceiling
            ok &= all(p == res.clearing_price for p in res.prices.values())
            ok &= res.procured <= target + max(b.amount for b in res.accepted) + 1e-9
            if res.unfilled == 0:
                ok &= res.procured - res.accepted[-1].amount < target
            pab = run_auction(bids, target, ceiling, "pay_as_bid")
            ok &= [id(b) for b in pab.accepted] == [id(b) for b in res.accepted]
            ok &= all(pab.prices[(b.agent, b.tech)] <= res.clearing_price for b in pab.accepted)
        bad += not ok
    ok = record_criterion(2, bad == 0, f"auction vs brute force: {1000 - bad}/1000 match, price <= ceiling")
    assert ok


# 3: settlement -------------------------------------------------------------------------------


def test_criterion_3_settlement(record_criterion):
    rng = np.random.default_rng(3)
    solar = make_technology("solar")
    ccgt = make_technology("ccgt")
    strike = 500.0
    cfd_bad = cm_bad = 0
    for _ in range(500):
        plant = Asset(1, "a", "solar", float(rng.uniform(1, 500)), "cfd", remaining_life_steps=10,
                      cfd_strike=float(rng.uniform(0, 200)))
        q = rng.uniform(0, plant.capacity_mw, 24)
        kw = dict(dispatched=q, scarcity_strike=strike, carbon_tax=float(rng.uniform(0, 100)), year=2025,
                  days=float(rng.uniform(1, 60)), year_frac=1 / 6)
        a = settle_asset(plant, solar, spot_prices=rng.uniform(0, VOLL, 24), **kw)
        b = settle_asset(plant, solar, spot_prices=rng.uniform(0, VOLL, 24), **kw)
        cfd_bad += a != b

        cm = Asset(2, "a", "ccgt", 10.0, "cm", remaining_life_steps=10, cm_premium=float(rng.uniform(0, 1e5)),
                   cm_firm_capacity_mw=float(rng.uniform(0, 10)))
        prices = rng.uniform(0, strike, 24)
        disp = rng.uniform(0, 10, 24)
        tax, days = float(rng.uniform(0, 100)), float(rng.uniform(1, 60))
        got = settle_cm(cm, ccgt, disp, prices, strike, tax, 2025, days, 1 / 6)
        want = settle_merchant(cm, ccgt, disp, prices, tax, 2025, days, 1 / 6) + premium_term(cm, 1 / 6)
        cm_bad += got != want
    option = reliability_option_term([500.0], 300.0, 10.0, days=1.0)
    ok = record_criterion(3, cfd_bad == 0 and cm_bad == 0 and option == -2000.0,
                          f"CfD spot-invariant {500 - cfd_bad}/500, CM out-of-money = merchant + premium "
                          f"{500 - cm_bad}/500 (exact), option term (500, 300, 10 MW, 1 h) = {option}")
    assert ok


# 4: rewards and terminal annuity -------------------------------------------------------------


def test_criterion_4_reward_identity(record_criterion):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        spy = int(rng.choice([1, 2, 6, 12]))
        rate = float(rng.uniform(0, 0.15))
        nf = float(rng.uniform(1, 1e9))
        cash = rng.normal(0, 1e7, int(rng.integers(1, 200)))
        total = math.fsum(compute_reward(float(c), t, spy, rate, nf) for t, c in enumerate(cash))
        oracle = math.fsum(float(c) / (1 + rate) ** (t / spy) for t, c in enumerate(cash)) / nf
        worst = max(worst, abs(total - oracle) / max(abs(oracle), 1e-300))

    # the same identity on an environment episode: undoing discount and normalization gives the ledger
    scn = toy()
    env = MarketEnv(scn)
    out = env.reset(4)
    arng = np.random.default_rng(4)
    env_worst = 0.0
    while not out.done:
        out = env.step({a: random_actions(arng, env.layout, out.masks[a]) for a in env.agents})
        t = out.info["step"]
        for agent, flows in out.info["cashflows"].items():
            undone = out.rewards[agent] * scn.normalization_factor * (1 + scn.discount_rate) ** (t / scn.steps_per_year)
            ledger = ledger_totals(flows)
            env_worst = max(env_worst, abs(undone - ledger) / max(abs(ledger), 1.0))

    ann_worst = 0.0
    for _ in range(200):
        income, rate, years = float(rng.normal(0, 1e6)), float(rng.uniform(0.001, 0.2)), int(rng.integers(0, 40))
        oracle = math.fsum(income / (1 + rate) ** k for k in range(1, years + 1))
        ann_worst = max(ann_worst, abs(absorbing_payment(income, rate, years) - oracle) / max(abs(oracle), 1.0))
    example = absorbing_payment(10.0, 0.08, 10)
    explicit = math.fsum(10.0 / 1.08**k for k in range(1, 11))

    ok = (worst <= 1e-10 and env_worst <= 1e-10 and ann_worst <= 1e-9
          and abs(example - explicit) <= 1e-9 * explicit and abs(example - 67.10) < 0.005)
    record_criterion(4, ok, f"reward identity rel err {max(worst, env_worst):.1e} (<=1e-10), annuity rel err "
                            f"{ann_worst:.1e} (<=1e-9), 10/yr at 8% for 10 yr = {example:.4f}")
    assert ok


# 5: availability -----------------------------------------------------------------------------


def test_criterion_5_availability(record_criterion):
    p0, p50, p100 = availability_probabilities(0.925, 0.23)
    draws = sample_availability(np.random.default_rng(5), make_technology("ccgt"), size=10**6)
    mean, std = float(draws.mean()), float(draws.std())
    ok = (abs(p0 - 0.042) < 5e-4 and abs(p50 - 0.066) < 5e-4 and abs(p100 - 0.892) < 5e-4
          and abs(mean - 0.925) <= 0.003 and abs(std - 0.23) <= 0.003 and set(np.unique(draws)) <= {0.0, 0.5, 1.0})
    record_criterion(5, ok, f"p=({p0:.4f}, {p50:.4f}, {p100:.4f}); 1e6 draws mean {mean:.4f} std {std:.4f}")
    assert ok


# 6: observations and masks on random episodes -----------------------------------------------


def test_criterion_6_random_episodes(record_criterion):
    scn = load_scenario(BASE)
    env = MarketEnv(scn, record_info=False)
    lay = env.layout
    rng = np.random.default_rng(6)
    out_of_range = unsound = rejected = probes = steps = 0
    for ep in range(100):
        out = env.reset(ep)
        while True:
            for o in out.observations.values():
                out_of_range += not (np.all(np.isfinite(o)) and o.min() >= -1 and o.max() <= 1)
            if out.done:
                break
            acts = {a: random_actions(rng, lay, out.masks[a]) for a in env.agents}
            unsound += sum(not out.masks[a][off + k] for a in env.agents for off, k in zip(lay.offsets, acts[a]))
            if steps % 7 == 0:  # a masked index must be refused without touching state
                agent = env.agents[steps % len(env.agents)]
                m = out.masks[agent]
                choices = [(i, k) for i, (d, off) in enumerate(zip(lay.dims, lay.offsets))
                           for k in range(d.cardinality) if not m[off + k]]
                if choices:
                    i, k = choices[int(rng.integers(len(choices)))]
                    bad = {a: v.copy() for a, v in acts.items()}
                    bad[agent][i] = k
                    t_before = env.t
                    probes += 1
                    try:
                        env.step(bad)
                    except MaskViolation:
                        rejected += env.t == t_before
            out = env.step(acts)
            steps += 1
    ok = env.observation_size == 142 and out_of_range == 0 and unsound == 0 and rejected == probes and probes > 0
    record_criterion(6, ok, f"100 episodes, {steps} steps, obs size {env.observation_size}, out-of-range "
                            f"{out_of_range}, masked samples {unsound}, masked probes refused {rejected}/{probes}")
    assert ok


# 7: gradients, GAE and ratio bound ----------------------------------------------------------


def _minibatch(seed, cards=(3, 4, 2), obs_dim=6, n=8):
    params = init_params(obs_dim, cards, (6, 6), seed, head_gain=0.5)
    dist = MultiDiscrete(cards)
    g = torch.Generator().manual_seed(seed)
    obs = torch.randn(n, obs_dim, generator=g, dtype=torch.float64)
    mask = torch.rand(n, sum(cards), generator=g) < 0.8
    for off, c in zip(np.cumsum((0, *cards[:-1])), cards):
        mask[:, off] = True  # every dimension keeps at least one legal index
    with torch.no_grad():
        lp = actor_log_probs(params, dist, obs, mask)
    rng = np.random.default_rng(seed)
    actions = torch.as_tensor(np.stack([sample_actions(rng, lp[i].numpy()) for i in range(n)]))
    with torch.no_grad():
        logp = dist.joint_log_prob(lp, actions) + 0.1 * torch.randn(n, generator=g, dtype=torch.float64)
    batch = {"obs": obs, "masks": mask, "actions": actions, "logp": logp,
             "advantages": torch.randn(n, generator=g, dtype=torch.float64),
             "targets": torch.randn(n, generator=g, dtype=torch.float64)}
    return params, dist, batch


def test_criterion_7_learner(record_criterion):
    kw = dict(clip_eps=0.2, entropy_coef=0.01, vf_coef=0.5, normalize_advantages=True)
    grad_err = 0.0
    for seed in range(100):
        params, dist, batch = _minibatch(seed)
        _, grads, _ = loss_and_grads(params, dist, batch, **kw)

        def loss():
            with torch.no_grad():
                return ppo_loss(params, dist, batch, **kw)[0].item()

        fd = finite_difference_grads(loss, params)
        for name, gr in grads.items():
            gr = gr.numpy()
            scale = max(np.linalg.norm(fd[name]), np.linalg.norm(gr), 1e-8)
            grad_err = max(grad_err, np.linalg.norm(fd[name] - gr) / scale)

    rng = np.random.default_rng(7)
    gae_err = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 40))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = rng.random(n) < 0.2
        last, gamma = float(rng.normal()), float(rng.uniform(0.5, 1.0))
        tgt, adv = compute_targets(r, v, d, last, gamma, 1.0)
        oracle = n_step_targets(r, d, last, gamma)
        gae_err = max(gae_err, np.abs(tgt - oracle).max(), np.abs(adv - (oracle - v)).max())

    # one epoch at clip 0.1 and lr 3e-4 on real rollout batches
    scn = toy()
    cfg = preset("desk", clip_eps=0.1, lr=3e-4, epochs=1)
    ratios = []
    for seed in range(5):
        ps = init_policy_set(scn, preset("desk", seed=seed))
        batches, _ = collect_rollouts(scn, ps.numpy_params(), cfg.batch_size, seed=seed)
        dist = MultiDiscrete(MarketEnv(scn).layout.cardinalities)
        for agent, traj in batches.items():
            new, _ = update_agent(ps.params[agent], ps.adam[agent], traj, cfg, dist, np.random.default_rng(seed))
            with torch.no_grad():
                lp = dist.joint_log_prob(actor_log_probs(new, dist, torch.as_tensor(traj.obs),
                                                         torch.as_tensor(traj.masks)), torch.as_tensor(traj.actions))
            ratios.append(torch.exp(lp - torch.as_tensor(traj.logp)).numpy())
    ratios = np.concatenate(ratios)
    inside = float(np.mean((ratios >= 0.85) & (ratios <= 1.15)))

    ok = grad_err < 1e-4 and gae_err <= 1e-10 and inside >= 0.99
    record_criterion(7, ok, f"FD gradient rel err {grad_err:.1e} over 100 minibatches, GAE(lambda=1) err "
                            f"{gae_err:.1e}, ratios in [0.85, 1.15] for {inside:.2%} of {len(ratios)} samples")
    assert ok


# 8: training on the toy scenario -------------------------------------------------------------


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Desk-preset training on the toy scenario for five seeds, with per-iteration aggregate reward."""
    scn = load_scenario(TOY)
    runs = {}
    for seed in TRAIN_SEEDS:
        history = []
        result = train(scn, preset("desk", seed=seed), tmp_path_factory.mktemp(f"train{seed}"),
                       on_iteration=lambda it, stats: history.append(sum(stats.values())))
        runs[seed] = (np.array(history), result)
    return scn, runs


def first_quartile_slope(history):
    q = len(history) // 4
    return float(np.polyfit(np.arange(q + 1), history[: q + 1], 1)[0])


def test_criterion_8_training_improves(trained, record_criterion):
    _, runs = trained
    curves = np.stack([h for h, _ in runs.values()])
    mean_curve = curves.mean(axis=0)
    initial = float(mean_curve[0])
    slope = first_quartile_slope(mean_curve)
    finals = {s: float(h[-3:].mean()) for s, (h, _) in runs.items()}
    n_pos = sum(f > 0 for f in finals.values())
    per_seed = ", ".join(f"s{s}: {h[0]:+.1f} -> {finals[s]:+.1f} (slope {first_quartile_slope(h):+.2f})"
                         for s, (h, _) in runs.items())
    ok = initial < 0 and slope > 0 and n_pos >= 4
    record_criterion(8, ok, f"seed-mean initial {initial:+.1f}, first-quartile slope {slope:+.2f}, final > 0 in "
                            f"{n_pos}/5 seeds [{per_seed}]")
    assert ok


# 9: evaluation metrics and league -------------------------------------------------------------


def test_criterion_9_metrics_and_league(trained, record_criterion):
    rng = np.random.default_rng(9)
    hhi_ok = all(compute_hhi({str(i): v for i in range(n)}) == 10000 / n
                 for n in range(1, 51) for v in rng.uniform(0.1, 1e5, 20))
    annuity = sum(25.0 / 1.08**k for k in range(1, 21))
    irrs = [compute_irr([-100.0, 108.0]), compute_irr([-annuity, *[25.0] * 20])]
    irr_ok = all(r is not None and abs(r - 0.08) <= 1e-6 for r in irrs)

    scn, runs = trained
    untrained = init_policy_set(scn, preset("desk", head_gain=0.0))
    wins = 0
    deterministic = True
    for seed, (_, result) in runs.items():
        args = ([result.policies, untrained], scn)
        kw = dict(rounds=6, episodes_per_lineup=2, seed=seed, names=["trained", "untrained"])
        table = run_league(*args, **kw)
        if seed == 0:
            deterministic = table == run_league(*args, **kw)
        wins += table.ranks[0] == 1
    ok = hhi_ok and irr_ok and deterministic and wins >= 4
    record_criterion(9, ok, f"HHI = 10000/n exact: {hhi_ok}; IRR {irrs[0]:.8f}, {irrs[1]:.8f}; league repeatable: "
                            f"{deterministic}; trained ranks first in {wins}/5 leagues")
    assert ok


# 10: reproducible command-line runs ----------------------------------------------------------


def test_criterion_10_cli_reproducible(tmp_path, record_criterion):
    def run_pair(name, args):
        outs = []
        for k in range(2):
            out = tmp_path / f"{name}{k}"
            assert main([*args(out), "--workers", "1"]) == 0
            outs.append(out)
        return outs

    t1, t2 = run_pair("train", lambda o: ["train", "--scenario", str(TOY), "--budget-iters", "2", "--seed", "3",
                                          "--out", str(o)])
    same_train = all((t1 / f).read_bytes() == (t2 / f).read_bytes()
                     for f in ["metrics.jsonl", *[p.name for p in t1.glob("*.ltm")]])
    ckpt = sorted(t1.glob("*.ltm"))[-1]
    s1, s2 = run_pair("sim", lambda o: ["simulate", "--checkpoint", str(ckpt), "--scenario", str(TOY),
                                        "--episodes", "4", "--seed", "11", "--out", str(o / "records.jsonl")])
    same_sim = (s1 / "records.jsonl").read_bytes() == (s2 / "records.jsonl").read_bytes()
    ok = same_train and same_sim and any(t1.glob("*.ltm"))
    record_criterion(10, ok, f"train reruns byte-identical: {same_train}; simulate reruns byte-identical: {same_sim}")
    assert ok
