"""Investment channels: merchant commitments, CfD and capacity auctions, settlement."""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .market import Asset, CreditResult, EssSchedule, capacity_credits
from .scenario import Scenario, Technology, cost_at_year


class InvestmentError(ValueError):
    """An investment decision off the lumped grid or above the cap."""


class AuctionBid(NamedTuple):
    agent: str
    tech: str
    quantity: float  # MW of capacity
    price: float
    contribution: float | None = None  # firm MW or average MW; defaults to quantity

    @property
    def amount(self) -> float:
        return self.quantity if self.contribution is None else self.contribution


@dataclass
class AuctionResult:
    clearing_price: float | None
    awards: dict[tuple[str, str], float] = field(default_factory=dict)
    prices: dict[tuple[str, str], float] = field(default_factory=dict)
    unfilled: float = 0.0
    accepted: list[AuctionBid] = field(default_factory=list)

    @property
    def procured(self) -> float:
        return sum(b.amount for b in self.accepted)


def auction_order(bids: Iterable[AuctionBid]) -> list[AuctionBid]:
    return sorted(bids, key=lambda b: (b.price, -b.amount, b.agent, b.tech))


def run_auction(bids: Sequence[AuctionBid], target_quantity: float, ceiling: float,
                pricing_rule: str = "marginal") -> AuctionResult:
    """Single-sided lumpy auction.

    Bids are taken in price order until the target is covered; the last one is
    taken whole.  Under the marginal rule every winner gets the last accepted
    price, under pay-as-bid each winner gets its own.
    """
    if pricing_rule not in ("marginal", "pay_as_bid"):
        raise ValueError(f"unknown pricing rule {pricing_rule!r}")
    for b in bids:
        if not 0 <= b.price <= ceiling + 1e-9:
            raise ValueError(f"bid from {b.agent} priced {b.price} outside [0, {ceiling}]")
    live = [b for b in bids if b.quantity > 0 and b.amount > 0]
    if target_quantity <= 0:
        return AuctionResult(None, unfilled=0.0)
    accepted: list[AuctionBid] = []
    covered = 0.0
    for b in auction_order(live):
        if covered >= target_quantity - 1e-9:
            break
        accepted.append(b)
        covered += b.amount
    if not accepted:
        return AuctionResult(None, unfilled=float(target_quantity))
    marginal = accepted[-1].price
    res = AuctionResult(marginal, unfilled=max(float(target_quantity) - covered, 0.0), accepted=accepted)
    for b in accepted:
        key = (b.agent, b.tech)
        res.awards[key] = res.awards.get(key, 0.0) + b.quantity
        res.prices[key] = marginal if pricing_rule == "marginal" else b.price
    return res


# --------------------------------------------------------------------------
# system balances at the planning horizon


def horizon_year(scenario: Scenario, step: int) -> int:
    return scenario.year_of_step(step) + scenario.planning_horizon_years


def capacity_at_horizon(assets: Iterable[Asset], scenario: Scenario, step: int) -> dict[str, float]:
    """MW per technology that is operating at the start of the horizon year.

    Pipeline assets count if they finish before then, assets retiring before
    then do not.
    """
    s_h = (horizon_year(scenario, step) - scenario.first_year) * scenario.steps_per_year
    out: dict[str, float] = {}
    for a in assets:
        start = step + a.steps_to_operation
        end = start + a.remaining_life_steps
        if start <= s_h < end:
            out[a.tech] = out.get(a.tech, 0.0) + a.capacity_mw
    return out


def res_balance(capacity: Mapping[str, float], scenario: Scenario, year: int) -> tuple[float, float]:
    """(required, expected) average RES MW in ``year``."""
    required = scenario.res_target(year) * scenario.mean_demand * scenario.demand_factor(year)
    expected = 0.0
    for t in scenario.technologies:
        if t.is_res:
            expected += capacity.get(t.id, 0.0) * scenario.mean_cf[t.id] * t.availability_mean
    return required, expected


def res_deficit(assets: Iterable[Asset], scenario: Scenario, step: int) -> float:
    """Average-MW shortfall against the RES target at the planning horizon."""
    year = horizon_year(scenario, step)
    required, expected = res_balance(capacity_at_horizon(assets, scenario, step), scenario, year)
    return required - expected


def adequacy_deficit(assets: Iterable[Asset], scenario: Scenario, step: int) -> tuple[float, CreditResult]:
    """MW shortfall at the critical hour of the grown peak day, with the credits used."""
    year = horizon_year(scenario, step)
    cap = capacity_at_horizon(assets, scenario, step)
    demand = scenario.peak_day.demand * scenario.demand_factor(year) * (1.0 + scenario.demand_margin)
    cr = capacity_credits(cap, scenario.technologies, scenario.peak_day, demand)
    return -cr.adequacy_margin, cr


# --------------------------------------------------------------------------
# settlement.  ``dispatched`` is MWh per hour of the representative day,
# ``days`` the number of days the step stands for and ``year_frac`` the
# fraction of a year used to prorate fixed costs and premiums.


def _fixed_cost(asset: Asset, tech: Technology, year: float, year_frac: float) -> float:
    return cost_at_year(tech, year).opex_fixed * asset.capacity_mw * year_frac


def _variable_rate(tech: Technology, carbon_tax: float, year: float) -> float:
    return cost_at_year(tech, year).opex_var + tech.emission_factor * carbon_tax


def settle_merchant(asset: Asset, tech: Technology, dispatched, spot_prices, carbon_tax: float, year: float,
                    days: float = 1.0, year_frac: float = 1.0) -> float:
    q = np.asarray(dispatched, dtype=float)
    p = np.asarray(spot_prices, dtype=float)
    energy = days * float(q.sum())
    revenue = days * float(p @ q)
    return revenue - _variable_rate(tech, carbon_tax, year) * energy - _fixed_cost(asset, tech, year, year_frac)


def settle_cfd(asset: Asset, tech: Technology, dispatched, carbon_tax: float, year: float,
               days: float = 1.0, year_frac: float = 1.0) -> float:
    """Two-way CfD: output is paid at the strike, whatever the spot price."""
    if asset.cfd_strike is None:
        raise ValueError(f"asset {asset.id} has no CfD strike")
    energy = days * float(np.asarray(dispatched, dtype=float).sum())
    return (asset.cfd_strike * energy - _variable_rate(tech, carbon_tax, year) * energy
            - _fixed_cost(asset, tech, year, year_frac))


def reliability_option_term(spot_prices, strike: float, firm_mw: float, days: float = 1.0) -> float:
    """Refund owed on the firm commitment when spot exceeds the strike (<= 0)."""
    over = np.maximum(np.asarray(spot_prices, dtype=float) - strike, 0.0)
    return -days * float(over.sum()) * firm_mw


def premium_term(asset: Asset, year_frac: float = 1.0) -> float:
    return asset.cm_firm_capacity_mw * asset.cm_premium * year_frac


def settle_cm(asset: Asset, tech: Technology, dispatched, spot_prices, scarcity_strike: float, carbon_tax: float,
              year: float, days: float = 1.0, year_frac: float = 1.0) -> float:
    if asset.cm_premium is None:
        raise ValueError(f"asset {asset.id} has no capacity contract")
    merchant = settle_merchant(asset, tech, dispatched, spot_prices, carbon_tax, year, days, year_frac)
    option = reliability_option_term(spot_prices, scarcity_strike, asset.cm_firm_capacity_mw, days)
    return merchant + premium_term(asset, year_frac) + option


def settle_ess(asset: Asset, tech: Technology, schedule: EssSchedule, spot_prices, year: float,
               scarcity_strike: float = 500.0, days: float = 1.0, year_frac: float = 1.0) -> float:
    p = np.asarray(spot_prices, dtype=float)
    net = np.asarray(schedule.net_mw, dtype=float)
    profit = days * float(p @ net) - days * tech.opex_var * float(np.maximum(net, 0).sum())
    profit -= _fixed_cost(asset, tech, year, year_frac)
    if asset.entry_channel == "cm":
        profit += premium_term(asset, year_frac)
        profit += reliability_option_term(p, scarcity_strike, asset.cm_firm_capacity_mw, days)
    return profit


def settle_asset(asset: Asset, tech: Technology, *, dispatched=None, schedule: EssSchedule | None = None,
                 spot_prices, scarcity_strike: float, carbon_tax: float, year: float, days: float,
                 year_frac: float) -> float:
    """Step profit of one operating asset, dispatched on its entry channel."""
    if tech.is_ess:
        if schedule is None:
            raise ValueError(f"storage asset {asset.id} settled without a schedule")
        return settle_ess(asset, tech, schedule, spot_prices, year, scarcity_strike, days, year_frac)
    match asset.entry_channel:
        case "existing" | "merchant":
            return settle_merchant(asset, tech, dispatched, spot_prices, carbon_tax, year, days, year_frac)
        case "cfd":
            return settle_cfd(asset, tech, dispatched, carbon_tax, year, days, year_frac)
        case "cm":
            return settle_cm(asset, tech, dispatched, spot_prices, scarcity_strike, carbon_tax, year, days, year_frac)
        case other:
            raise ValueError(f"asset {asset.id}: unknown channel {other!r}")


# --------------------------------------------------------------------------
# commitments


def grid_index(mw: float, max_mw: float, steps: int) -> int:
    """Index of ``mw`` on the uniform grid 0..max_mw with ``steps`` points."""
    if mw < -1e-9 or mw > max_mw * (1 + 1e-12) + 1e-9:
        raise InvestmentError(f"{mw} MW outside [0, {max_mw}]")
    if max_mw == 0:
        if mw != 0:
            raise InvestmentError(f"{mw} MW with zero cap")
        return 0
    k = mw * (steps - 1) / max_mw
    if abs(k - round(k)) > 1e-9:
        raise InvestmentError(f"{mw} MW is not on the {steps}-step grid up to {max_mw}")
    return int(round(k))


def commit_investments(agent: str, decisions: Mapping[str, float], scenario: Scenario, step: int,
                       next_id: int, channel: str = "merchant",
                       contract: Mapping[str, Mapping[str, float]] | None = None) -> list[Asset]:
    """Create pipeline assets for ``decisions`` (tech -> MW).

    CAPEX at the decision year is split into equal per-step installments over
    the construction period (one installment if construction is instant).
    ``contract`` carries per-technology channel fields (``cfd_strike`` or
    ``cm_premium``/``cm_firm_capacity_mw``).
    """
    year = scenario.year_of_step(step)
    spy = scenario.steps_per_year
    out = []
    for tech_id in scenario.tech_ids:
        mw = float(decisions.get(tech_id, 0.0))
        if mw == 0:
            continue
        tech = scenario.tech(tech_id)
        if not tech.investable:
            raise InvestmentError(f"{agent}: {tech_id} is not investable")
        grid_index(mw, tech.max_invest_mw, scenario.quantity_steps)
        n_steps = tech.construction_years * spy
        total = mw * cost_at_year(tech, year).capex_per_mw
        extra = dict((contract or {}).get(tech_id, {}))
        asset = Asset(
            id=next_id + len(out), owner=agent, tech=tech_id, capacity_mw=mw, entry_channel=channel,
            steps_to_operation=n_steps, remaining_life_steps=tech.lifetime_years * spy,
            installment=total / max(n_steps, 1), installments_left=max(n_steps, 1), build_step=step, **extra,
        )
        out.append(asset)
    unknown = set(decisions) - set(scenario.tech_ids)
    if unknown:
        raise InvestmentError(f"{agent}: unknown technologies {sorted(unknown)}")
    return out


def commit_merchant(agent: str, decisions: Mapping[str, float], scenario: Scenario, step: int,
                    next_id: int) -> list[Asset]:
    return commit_investments(agent, decisions, scenario, step, next_id, "merchant")
