"""Multi-agent episodic market environment.

Each step stands for ``365 / steps_per_year`` days, summarized by one
representative day.  Agents only act on investments (and the reservoir level
of mid-term storage); spot-market participation is automatic.  Rewards are
discounted inside the environment and scaled by ``voll**2 * years``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .longterm import (
    AuctionBid,
    adequacy_deficit,
    commit_investments,
    res_balance,
    capacity_at_horizon,
    horizon_year,
    reliability_option_term,
    run_auction,
    settle_asset,
)
from .market import Asset, EssUnit, clear_day, marginal_bid, schedule_mid_ess, schedule_short_ess
from .scenario import Scenario, sample_availability

INVEST_CHANNELS = ("merchant", "cfd", "cm")


class MaskViolation(ValueError):
    """An agent submitted an action index that was masked."""


@dataclass(frozen=True)
class Dim:
    kind: str  # merchant_q, cfd_q, cfd_p, cm_q, cm_p, soc
    tech: str | None
    cardinality: int

    @property
    def name(self) -> str:
        return f"{self.kind}:{self.tech}" if self.tech else self.kind


@dataclass(frozen=True)
class ActionLayout:
    merchant_techs: tuple[str, ...]
    cfd_techs: tuple[str, ...]
    cm_techs: tuple[str, ...]
    quantity_steps: int = 4
    price_steps: int = 12
    soc_steps: int = 7

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> ActionLayout:
        inv = tuple(t.id for t in scenario.technologies if t.investable)
        res = tuple(t.id for t in scenario.technologies if t.investable and t.is_res)
        return cls(inv, res, inv, scenario.quantity_steps, scenario.price_steps, scenario.soc_steps)

    @property
    def dims(self) -> tuple[Dim, ...]:
        q, p = self.quantity_steps, self.price_steps
        out = [Dim("merchant_q", t, q) for t in self.merchant_techs]
        out += [Dim("cfd_q", t, q) for t in self.cfd_techs]
        out += [Dim("cfd_p", t, p) for t in self.cfd_techs]
        out += [Dim("cm_q", t, q) for t in self.cm_techs]
        out += [Dim("cm_p", t, p) for t in self.cm_techs]
        out.append(Dim("soc", None, self.soc_steps))
        return tuple(out)

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(d.cardinality for d in self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.cardinalities)[:-1]]).astype(int)

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        return int(sum(self.cardinalities))

    def index(self, kind: str, tech: str | None = None) -> int:
        for i, d in enumerate(self.dims):
            if d.kind == kind and d.tech == tech:
                return i
        raise KeyError((kind, tech))

    def to_dict(self) -> dict:
        return {
            "merchant_techs": list(self.merchant_techs), "cfd_techs": list(self.cfd_techs),
            "cm_techs": list(self.cm_techs), "quantity_steps": self.quantity_steps,
            "price_steps": self.price_steps, "soc_steps": self.soc_steps,
        }


@dataclass
class AgentDecision:
    merchant: dict[str, float] = field(default_factory=dict)
    cfd: dict[str, tuple[float, float]] = field(default_factory=dict)
    cm: dict[str, tuple[float, float]] = field(default_factory=dict)
    soc_target: float = 0.0


def decode_actions(scenario: Scenario, layout: ActionLayout, indices) -> AgentDecision:
    idx = np.asarray(indices)
    if idx.shape != (layout.n_dims,):
        raise ValueError(f"expected {layout.n_dims} action indices, got shape {idx.shape}")
    dec = AgentDecision()
    quantities: dict[tuple[str, str], float] = {}
    prices: dict[tuple[str, str], float] = {}
    for i, (d, k) in enumerate(zip(layout.dims, idx)):
        k = int(k)
        if not 0 <= k < d.cardinality:
            raise ValueError(f"dimension {i} ({d.name}): index {k} outside [0, {d.cardinality})")
        frac = k / (d.cardinality - 1)
        if d.kind == "soc":
            dec.soc_target = frac
        elif d.kind.endswith("_q"):
            quantities[(d.kind[:-2], d.tech)] = frac * scenario.tech(d.tech).max_invest_mw
        else:
            cap = scenario.cfd_price_cap if d.kind == "cfd_p" else scenario.cm_price_cap
            prices[(d.kind[:-2], d.tech)] = frac * cap
    for (ch, tech), mw in quantities.items():
        if ch == "merchant":
            dec.merchant[tech] = mw
        else:
            getattr(dec, ch)[tech] = (mw, prices[(ch, tech)])
    return dec


def compute_reward(net_cash: float, step: int, steps_per_year: int, discount_rate: float, nf: float) -> float:
    """Discounted, normalized step reward."""
    return net_cash * (1.0 + discount_rate) ** (-step / steps_per_year) / nf


def absorbing_payment(mean_income: float, discount_rate: float, remaining_years: float) -> float:
    """Present value of ``mean_income`` per year over the remaining life."""
    if remaining_years <= 0:
        return 0.0
    if discount_rate == 0:
        return mean_income * remaining_years
    return mean_income * (1.0 - (1.0 + discount_rate) ** (-remaining_years)) / discount_rate


def norm1(x, xmax):
    return 2.0 * np.asarray(x, dtype=float) / xmax - 1.0 if xmax > 0 else -np.ones_like(np.asarray(x, float))


def norm2(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, (a - b) / np.where(s > 0, s, 1.0), -1.0)


def norm3(x, nf):
    return np.asarray(x, dtype=float) / nf


def norm4(x):
    return 2.0 * np.asarray(x, dtype=float) - 1.0


@dataclass
class StepOutcome:
    observations: dict[str, np.ndarray]
    rewards: dict[str, float]
    masks: dict[str, np.ndarray]
    done: bool
    info: dict[str, Any]


class MarketEnv:
    """Long-term electricity market with merchant, capacity and CfD channels."""

    def __init__(self, scenario: Scenario, record_info: bool = True):
        self.scenario = scenario
        self.layout = ActionLayout.from_scenario(scenario)
        self.agents = tuple(a.id for a in scenario.agents)
        self.record_info = record_info
        self._techs = {t.id: t for t in scenario.technologies}
        self._tech_ids = scenario.tech_ids
        self._agent_specs = {a.id: a for a in scenario.agents}
        self._max_tax = max(list(scenario.carbon_tax_schedule.values()) or [0.0])
        self.t = 0
        self.assets: list[Asset] = []

    # ------------------------------------------------------------------ sizes
    @property
    def episode_steps(self) -> int:
        return self.scenario.episode_steps

    @property
    def observation_size(self) -> int:
        n_all = len(self._tech_ids)
        lay = self.layout
        n_m, n_r, n_c = len(lay.merchant_techs), len(lay.cfd_techs), len(lay.cm_techs)
        return (24 + 2 + 2 + 1 + 1 + 1 + 1 + 4 * n_all + 2 * n_m + 2 * n_r + 2 * n_c
                + 2 + 2 + 2 + n_c + 1 + 3 + n_all + n_m + n_r + n_c + 2)

    # ------------------------------------------------------------------ reset
    def reset(self, seed: int) -> StepOutcome:
        scn = self.scenario
        self.rng = np.random.default_rng(seed)
        self.t = 0
        self.assets = []
        self._next_id = 0
        spy = scn.steps_per_year
        end_year = scn.first_year + scn.years
        for spec in scn.agents:
            for e in spec.existing:
                retire = max(e.retire_year, scn.start_year)
                if retire > scn.last_study_year:
                    retire = max(retire, end_year)  # no retirements while padding
                life = (retire - scn.first_year) * spy
                if life <= 0:
                    continue
                a = Asset(self._next_id, spec.id, e.tech, e.capacity_mw, "existing", 0, life)
                if self._techs[e.tech].id == "ess_mid":
                    a.soc_mwh = 0.5 * e.capacity_mw * self._techs[e.tech].ess_duration_hours
                self.assets.append(a)
                self._next_id += 1
        self._scheduled: dict[tuple[str, int], float] = {}
        self._last_price = {"cfd": 0.0, "cm": 0.0}
        self._prices = np.zeros(24)
        self._acc = {a: defaultdict(float) for a in self.agents}
        self._profit_stats: dict[tuple[str, str], list[float]] = defaultdict(lambda: [0.0, 0.0])
        self._asset_npv: dict[int, float] = {}
        self._investments: list[dict] = []
        self._res_deficit = 0.0
        self._res_required = 0.0
        self._adequacy_deficit, self._credits = adequacy_deficit(self.assets, scn, 0)
        self._refresh_res_balance()
        self._day_index = self._draw_day(0)
        self._masks = {a: self.action_mask(a) for a in self.agents}
        info = {"step": -1, "year": scn.first_year} if self.record_info else {}
        obs = {a: self.build_observation(a) for a in self.agents}
        return StepOutcome(obs, {a: 0.0 for a in self.agents}, dict(self._masks), False, info)

    def _draw_day(self, t: int) -> int:
        spy = self.scenario.steps_per_year
        window = t % spy
        candidates = [window]  # averaged days: one candidate per window
        return candidates[int(self.rng.integers(len(candidates)))]

    def _refresh_res_balance(self):
        scn = self.scenario
        year = horizon_year(scn, self.t)
        req, exp = res_balance(capacity_at_horizon(self.assets, scn, self.t), scn, year)
        self._res_required, self._res_deficit = req, req - exp

    # ------------------------------------------------------------------ masks
    def _channel_open(self, channel: str, t: int) -> bool:
        scn = self.scenario
        enabled = {"merchant": scn.merchant_enabled, "cfd": scn.cfd_enabled, "cm": scn.cm_enabled}[channel]
        if not enabled or t % scn.steps_per_year != scn.slots[channel]:
            return False
        if channel == "merchant":
            return True
        return (channel, scn.year_of_step(t)) in self._scheduled

    def action_mask(self, agent: str, t: int | None = None) -> np.ndarray:
        scn = self.scenario
        t = self.t if t is None else t
        lay = self.layout
        mask = np.zeros(lay.total, dtype=bool)
        offsets = lay.offsets
        mask[offsets] = True  # index 0 is always allowed
        spec = self._agent_specs[agent]
        year = scn.year_of_step(t)
        remaining = scn.episode_steps - t
        open_ = {ch: self._channel_open(ch, t) for ch in INVEST_CHANNELS}
        for i, d in enumerate(lay.dims):
            if d.kind == "soc":
                live = any(a.owner == agent and a.tech == "ess_mid" and a.operating for a in self.assets)
            else:
                ch = d.kind[:-2]
                tech = self._techs[d.tech]
                live = (
                    open_[ch]
                    and d.tech in spec.technologies
                    and not scn.is_banned(agent, d.tech, ch, year)
                    and tech.construction_years * scn.steps_per_year < remaining
                    and tech.max_invest_mw > 0
                    and (ch != "cm" or self._credits.credits.get(d.tech, 0.0) > 0)
                )
            if live:
                mask[offsets[i]: offsets[i] + d.cardinality] = True
        return mask

    def _check_action(self, agent: str, idx: np.ndarray):
        lay = self.layout
        mask = self._masks[agent]
        for i, (d, off) in enumerate(zip(lay.dims, lay.offsets)):
            k = int(idx[i])
            if not 0 <= k < d.cardinality:
                raise MaskViolation(f"agent {agent}: dimension {i} ({d.name}) index {k} out of range")
            if not mask[off + k]:
                raise MaskViolation(f"agent {agent}: dimension {i} ({d.name}) index {k} is masked at step {self.t}")

    # ------------------------------------------------------------------ step
    def step(self, actions: dict[str, Any]) -> StepOutcome:
        scn = self.scenario
        if self.t >= scn.episode_steps:
            raise RuntimeError("episode is over; call reset()")
        t = self.t
        spy = scn.steps_per_year
        year = scn.year_of_step(t)
        days = scn.days_per_step
        year_frac = 1.0 / spy
        tax = scn.carbon_tax(year)

        # (1) decode
        decisions = {}
        for agent in self.agents:
            idx = np.asarray(actions[agent], dtype=int)
            if idx.shape != (self.layout.n_dims,):
                raise MaskViolation(f"agent {agent}: expected {self.layout.n_dims} action indices")
            self._check_action(agent, idx)
            decisions[agent] = decode_actions(scn, self.layout, idx)

        # (2) availability
        operating = [a for a in self.assets if a.operating]
        by_tech: dict[str, list[Asset]] = defaultdict(list)
        for a in operating:
            by_tech[a.tech].append(a)
        for tech_id in self._tech_ids:
            group = by_tech.get(tech_id)
            if group:
                draws = sample_availability(self.rng, self._techs[tech_id], size=len(group))
                for a, d in zip(group, draws):
                    a.availability_draw = float(d)

        # (3) storage schedules
        day = scn.rep_days[self._day_index]
        demand = day.demand * scn.demand_factor(year)
        gens = sorted((a for a in operating if not self._techs[a.tech].is_ess), key=lambda a: a.id)
        gen_q = np.array([a.capacity_mw * a.availability_draw * day.cf(self._techs[a.tech].cf_profile)
                          for a in gens]).reshape(len(gens), 24)
        margins = gen_q.sum(axis=0) - demand
        schedules = {}
        short = [a for a in operating if a.tech == "ess_short"]
        if short:
            tech = self._techs["ess_short"]
            units = [EssUnit(a.capacity_mw * a.availability_draw, a.capacity_mw * tech.ess_duration_hours,
                             tech.efficiency) for a in short]
            for a, s in zip(short, schedule_short_ess(margins, units)):
                schedules[a.id] = s
                margins = margins + s.net_mw
        mids = [a for a in operating if a.tech == "ess_mid"]
        if mids:
            tech = self._techs["ess_mid"]
            total_mid = sum(a.capacity_mw for a in mids)
            for a in mids:
                unit = EssUnit(a.capacity_mw * a.availability_draw, a.capacity_mw * tech.ess_duration_hours,
                               tech.efficiency)
                inflow = day.hydro_inflow * a.capacity_mw / total_mid
                s = schedule_mid_ess(margins, unit, inflow, decisions[a.owner].soc_target, a.soc_mwh)
                schedules[a.id] = s
                a.soc_mwh = s.soc_end
                margins = margins + s.net_mw

        # (4) spot clearing
        ess_net = sum((s.net_mw for s in schedules.values()), np.zeros(24))
        net_demand = np.maximum(demand - ess_net, 0.0)
        bid_prices = np.array([marginal_bid(self._techs[a.tech], tax, year) for a in gens])
        cleared = clear_day(gen_q, bid_prices, net_demand, scn.voll)
        prices = cleared.prices
        self._prices = prices

        # (5) settlement
        P = {a: defaultdict(float) for a in self.agents}  # (channel, tech) -> profit
        IC = {a: defaultdict(float) for a in self.agents}
        disc = (1.0 + scn.discount_rate) ** (-t / spy)
        dispatch_rows = {a.id: cleared.dispatched[i] for i, a in enumerate(gens)}
        dispatch_by_tech: dict[str, float] = defaultdict(float)
        emissions = 0.0
        cm_premiums = cm_refunds = cfd_transfers = 0.0
        for a in self.assets:
            tech = self._techs[a.tech]
            key = (a.entry_channel, a.tech)
            if a.steps_to_operation > 0 and a.installments_left > 0:
                IC[a.owner][key] += a.installment
                a.installments_left -= 1
                if a.entry_channel != "existing":
                    self._asset_npv[a.id] = self._asset_npv.get(a.id, 0.0) - a.installment * disc
                continue
            if not a.operating:
                continue
            q = dispatch_rows.get(a.id)
            profit = settle_asset(a, tech, dispatched=q, schedule=schedules.get(a.id), spot_prices=prices,
                                  scarcity_strike=scn.scarcity_strike, carbon_tax=tax, year=year, days=days,
                                  year_frac=year_frac)
            P[a.owner][key] += profit
            stats = self._profit_stats[(a.tech, a.entry_channel)]
            stats[0] += profit
            stats[1] += a.capacity_mw
            if a.entry_channel != "existing":
                self._asset_npv[a.id] = self._asset_npv.get(a.id, 0.0) + profit * disc
            if q is not None:
                energy = days * float(q.sum())
                dispatch_by_tech[a.tech] += energy
                emissions += energy * tech.emission_factor
                if a.entry_channel == "cfd":
                    cfd_transfers += days * float((a.cfd_strike - prices) @ q)
            else:
                dispatch_by_tech[a.tech] += days * float(schedules[a.id].net_mw.sum())
            if a.entry_channel == "cm":
                cm_premiums += a.cm_firm_capacity_mw * a.cm_premium * year_frac
                cm_refunds -= reliability_option_term(prices, scn.scarcity_strike, a.cm_firm_capacity_mw, days)

        # (6) investment channel of this slot
        auctions = []
        new_assets: list[Asset] = []
        slot = t % spy
        if self._channel_open("merchant", t):
            for agent in self.agents:
                made = commit_investments(agent, decisions[agent].merchant, scn, t, self._next_id, "merchant")
                self._next_id += len(made)
                new_assets += made
        for ch in ("cm", "cfd"):
            if self._channel_open(ch, t):
                outcome, made = self._run_channel_auction(ch, t, decisions)
                auctions.append(outcome)
                new_assets += made
        for a in new_assets:
            IC[a.owner][(a.entry_channel, a.tech)] += a.installment
            a.installments_left -= 1
            self._asset_npv[a.id] = -a.installment * disc
            self._investments.append({"asset": a.id, "agent": a.owner, "tech": a.tech, "channel": a.entry_channel,
                                      "mw": a.capacity_mw, "step": t, "capex": a.installment *
                                      max(self._techs[a.tech].construction_years * spy, 1)})
        self.assets += new_assets
        # deficit checks schedule next year's auctions
        if slot == scn.slots["cm"]:
            self._adequacy_deficit, self._credits = adequacy_deficit(self.assets, scn, t)
            if scn.cm_enabled and self._adequacy_deficit > 0:
                self._scheduled[("cm", year + 1)] = self._adequacy_deficit
        if slot == scn.slots["cfd"]:
            self._refresh_res_balance()
            if scn.cfd_enabled and self._res_deficit > 0:
                self._scheduled[("cfd", year + 1)] = self._res_deficit

        # (7) advance pipelines and lifetimes
        for a in self.assets:
            if a.steps_to_operation > 0:
                a.steps_to_operation -= 1
            elif a.build_step == t:
                continue  # instant builds start operating next step
            elif a.remaining_life_steps > 0:
                a.remaining_life_steps -= 1
        self.assets = [a for a in self.assets if a.steps_to_operation > 0 or a.remaining_life_steps > 0]
        self.t += 1
        done = self.t >= scn.episode_steps

        # terminal annuity for remaining life
        absorbing = {}
        if done:
            for a in self.assets:
                s_profit, s_mw = self._profit_stats.get((a.tech, a.entry_channel), (0.0, 0.0))
                income = (s_profit / s_mw) * spy * a.capacity_mw if s_mw > 0 else 0.0
                pay = absorbing_payment(income, scn.discount_rate, a.remaining_life_steps / spy)
                P[a.owner][(a.entry_channel, a.tech)] += pay
                absorbing[a.id] = pay
                if a.entry_channel != "existing":
                    self._asset_npv[a.id] = self._asset_npv.get(a.id, 0.0) + pay * disc

        # (8) rewards, observations, masks
        rewards = {}
        nf = scn.normalization_factor
        ledgers = {}
        for agent in self.agents:
            net = sum(P[agent].values()) - sum(IC[agent].values())
            rewards[agent] = compute_reward(net, t, spy, scn.discount_rate, nf)
            acc = self._acc[agent]
            for key in set(P[agent]) | set(IC[agent]):
                acc[key] += P[agent].get(key, 0.0) - IC[agent].get(key, 0.0)
            ledgers[agent] = (P[agent], IC[agent])

        day_used = self._day_index
        if not done:
            self._day_index = self._draw_day(self.t)
            self._masks = {a: self.action_mask(a) for a in self.agents}
        else:
            self._masks = {a: self._closed_mask() for a in self.agents}
        obs = {a: self.build_observation(a) for a in self.agents}

        info: dict[str, Any] = {}
        if self.record_info:
            served = demand - cleared.lost_load
            spot_payments = days * float(prices @ served)
            info = {
                "step": t, "year": year, "rep_day": day_used,
                "prices": prices.tolist(), "demand": demand.tolist(),
                "lost_load_mwh": days * float(cleared.lost_load.sum()),
                "demand_mwh": days * float(demand.sum()),
                "dispatch_mwh": {k: dispatch_by_tech[k] for k in self._tech_ids if k in dispatch_by_tech},
                "emissions_t": emissions,
                "spot_payments": spot_payments, "cm_premiums": cm_premiums, "cm_option_refunds": cm_refunds,
                "cfd_transfers": cfd_transfers,
                "consumer_payment": spot_payments + cm_premiums - cm_refunds + cfd_transfers,
                "carbon_tax": tax,
                "auctions": auctions,
                "investments": [inv for inv in self._investments if inv["step"] == t],
                "cashflows": {ag: _ledger_dict(*ledgers[ag]) for ag in self.agents},
                "rewards": rewards,
            }
            if slot == spy - 1 or done:
                info["capacity"] = self.capacity_table()
            if done:
                info["investment_npv"] = {str(k): v for k, v in sorted(self._asset_npv.items())}
                info["absorbing"] = {str(k): v for k, v in sorted(absorbing.items())}
        return StepOutcome(obs, rewards, dict(self._masks), done, info)

    def _closed_mask(self) -> np.ndarray:
        mask = np.zeros(self.layout.total, dtype=bool)
        mask[self.layout.offsets] = True
        return mask

    def _run_channel_auction(self, ch: str, t: int, decisions: dict[str, Any]):
        scn = self.scenario
        year = scn.year_of_step(t)
        target = self._scheduled[(ch, year)]
        ceiling = scn.cm_price_cap if ch == "cm" else scn.cfd_price_cap
        bids = []
        for agent in self.agents:
            for tech_id, (mw, price) in getattr(decisions[agent], ch).items():
                if mw <= 0:
                    continue
                tech = self._techs[tech_id]
                if ch == "cm":
                    contrib = mw * self._credits.credits.get(tech_id, 0.0)
                else:
                    contrib = mw * scn.mean_cf[tech_id] * tech.availability_mean
                bids.append(AuctionBid(agent, tech_id, mw, price, contrib))
        res = run_auction(bids, target, ceiling, scn.pricing_rule)
        made: list[Asset] = []
        for (agent, tech_id), mw in sorted(res.awards.items()):
            price = res.prices[(agent, tech_id)]
            if ch == "cm":
                credit = self._credits.credits.get(tech_id, 0.0)
                contract = {tech_id: {"cm_premium": price * 1000.0, "cm_firm_capacity_mw": mw * credit}}
            else:
                contract = {tech_id: {"cfd_strike": price}}
            new = commit_investments(agent, {tech_id: mw}, scn, t, self._next_id, ch, contract)
            self._next_id += len(new)
            made += new
        if res.clearing_price is not None:
            self._last_price[ch] = res.clearing_price
        outcome = {
            "market": ch, "year": year, "target": target, "clearing_price": res.clearing_price,
            "unfilled": res.unfilled,
            "awards": [{"agent": ag, "tech": te, "mw": mw, "price": res.prices[(ag, te)]}
                       for (ag, te), mw in sorted(res.awards.items())],
            "bids": [{"agent": b.agent, "tech": b.tech, "mw": b.quantity, "price": b.price} for b in bids],
        }
        if ch == "cm":
            outcome["credits"] = dict(self._credits.credits)
        return outcome, made

    # ------------------------------------------------------------------ views
    def capacity_table(self) -> dict[str, dict[str, dict[str, float]]]:
        """agent -> tech -> channel -> MW, operating and pipeline assets."""
        out: dict[str, dict[str, dict[str, float]]] = {a: {} for a in self.agents}
        for a in self.assets:
            d = out[a.owner].setdefault(a.tech, {})
            d[a.entry_channel] = d.get(a.entry_channel, 0.0) + a.capacity_mw
        return out

    def build_observation(self, agent: str) -> np.ndarray:
        scn = self.scenario
        lay = self.layout
        t = min(self.t, scn.episode_steps - 1)
        year = scn.year_of_step(t)
        day = scn.rep_days[self._day_index]
        max_d = scn.max_demand
        st_demand = float(day.demand.mean()) * scn.demand_factor(year)
        lt_demand = scn.mean_demand * scn.demand_factor(horizon_year(scn, t))
        n_agents = len(self.agents)

        ids = self._tech_ids
        own = defaultdict(float)
        tot = defaultdict(float)
        for a in self.assets:
            tot[(a.entry_channel, a.tech)] += a.capacity_mw
            tot[("all", a.tech)] += a.capacity_mw
            if a.owner == agent:
                own[(a.entry_channel, a.tech)] += a.capacity_mw
                own[("all", a.tech)] += a.capacity_mw

        def cap(book, ch, techs):
            return np.array([book[(ch, x)] for x in techs])

        wind_st = 0.5 * (day.cf_onshore.mean() + day.cf_offshore.mean())
        wind_lt = 0.5 * (_mean_series(scn, "cf_onshore") + _mean_series(scn, "cf_offshore"))
        blocks = [
            norm1(self._prices, scn.voll),
            norm4([day.cf_solar.mean(), wind_st]),
            norm4([_mean_series(scn, "cf_solar"), wind_lt]),
            norm2([day.hydro_inflow.mean()], [st_demand]),
            norm2([scn.mean_inflow], [lt_demand]),
            norm1([st_demand], max_d),
            norm1([lt_demand], max_d),
            norm2(cap(own, "all", ids), lt_demand / n_agents),
            norm2(cap(tot, "all", ids), lt_demand),
            norm2(cap(own, "existing", ids), cap(own, "all", ids)),
            norm2(cap(tot, "existing", ids), cap(tot, "all", ids)),
        ]
        for ch, techs in (("merchant", lay.merchant_techs), ("cfd", lay.cfd_techs), ("cm", lay.cm_techs)):
            blocks.append(norm2(cap(own, ch, techs), cap(own, "all", techs)))
            blocks.append(norm2(cap(tot, ch, techs), cap(tot, "all", techs)))
        blocks += [
            norm2([max(max_d - self._res_deficit, 0.0), max(max_d - self._adequacy_deficit, 0.0)], [max_d, max_d]),
            np.array([norm1(self._last_price["cfd"], scn.cfd_price_cap), norm1(self._last_price["cm"], scn.cm_price_cap)]),
            norm4([float(("cfd", year) in self._scheduled or ("cfd", year + 1) in self._scheduled),
                   float(("cm", year) in self._scheduled or ("cm", year + 1) in self._scheduled)]),
            norm4([self._credits.credits.get(x, 0.0) for x in lay.cm_techs]),
            norm1([scn.carbon_tax(year)], self._max_tax),
            np.array([
                norm1(t % scn.steps_per_year, max(scn.steps_per_year - 1, 1)),
                norm1(t // scn.steps_per_year, max(scn.years - 1, 1)),
                norm1(t, max(scn.episode_steps - 1, 1)),
            ]),
        ]
        acc = self._acc[agent]
        nf = scn.normalization_factor
        blocks.append(norm3([acc[("existing", x)] for x in ids], nf))
        for ch, techs in (("merchant", lay.merchant_techs), ("cfd", lay.cfd_techs), ("cm", lay.cm_techs)):
            blocks.append(norm3([acc[(ch, x)] for x in techs], nf))
        blocks.append(norm4(self._reservoir_levels(agent)))
        obs = np.concatenate([np.atleast_1d(np.asarray(b, dtype=float)) for b in blocks])
        obs = np.nan_to_num(obs, nan=0.0, posinf=1.0, neginf=-1.0)
        return np.clip(obs, -1.0, 1.0)

    def _reservoir_levels(self, agent: str) -> list[float]:
        mids = [a for a in self.assets if a.tech == "ess_mid"]
        if not mids:
            return [0.0, 0.0]
        dur = self._techs["ess_mid"].ess_duration_hours

        def level(group):
            e = sum(a.capacity_mw * dur for a in group)
            return sum(a.soc_mwh for a in group) / e if e > 0 else 0.0

        return [level([a for a in mids if a.owner == agent]), level(mids)]

    @property
    def masks(self) -> dict[str, np.ndarray]:
        return dict(self._masks)


def _mean_series(scn: Scenario, name: str) -> float:
    w = np.array([d.months_represented for d in scn.rep_days])
    return float(sum(wi * getattr(d, name).mean() for wi, d in zip(w, scn.rep_days)) / w.sum())


def _ledger_dict(P, IC) -> dict[str, dict[str, float]]:
    out: dict[str, dict[str, float]] = {}
    for (ch, tech) in sorted(set(P) | set(IC)):
        out.setdefault(ch, {})[tech] = P.get((ch, tech), 0.0) - IC.get((ch, tech), 0.0)
    return out


def random_actions(rng: np.random.Generator, layout: ActionLayout, mask: np.ndarray) -> np.ndarray:
    """Uniform sample over the unmasked indices of each dimension."""
    out = np.zeros(layout.n_dims, dtype=int)
    for i, (d, off) in enumerate(zip(layout.dims, layout.offsets)):
        allowed = np.flatnonzero(mask[off: off + d.cardinality])
        out[i] = int(allowed[rng.integers(len(allowed))])
    return out


def ledger_totals(cashflows: dict[str, dict[str, float]]) -> float:
    return math.fsum(v for ch in cashflows.values() for v in ch.values())
