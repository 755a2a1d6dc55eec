"""Hourly market clearing, storage scheduling and adequacy accounting."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import CHANNELS, RepresentativeDay, Technology, cost_at_year


@dataclass
class Asset:
    """One block of capacity owned by an agent.

    Construction and life are counted in environment steps.  ``installment``
    is the per-step CAPEX payment owed while the asset is under construction.
    """

    id: int
    owner: str
    tech: str
    capacity_mw: float
    entry_channel: str
    steps_to_operation: int = 0
    remaining_life_steps: int = 0
    cfd_strike: float | None = None
    cm_premium: float | None = None  # currency per MW-firm-year
    cm_firm_capacity_mw: float | None = None
    availability_draw: float = 1.0
    installment: float = 0.0
    installments_left: int = 0
    build_step: int = -1
    soc_mwh: float = 0.0

    def __post_init__(self):
        if not self.capacity_mw > 0:
            raise ValueError(f"asset {self.id}: capacity must be > 0")
        if self.entry_channel not in CHANNELS:
            raise ValueError(f"asset {self.id}: unknown channel {self.entry_channel!r}")
        has_cfd = self.cfd_strike is not None
        has_cm = self.cm_premium is not None or self.cm_firm_capacity_mw is not None
        if has_cfd != (self.entry_channel == "cfd"):
            raise ValueError(f"asset {self.id}: cfd_strike must be set exactly for cfd assets")
        if self.entry_channel == "cm":
            if self.cm_premium is None or self.cm_firm_capacity_mw is None:
                raise ValueError(f"asset {self.id}: cm assets need premium and firm capacity")
            if self.cm_firm_capacity_mw > self.capacity_mw + 1e-9:
                raise ValueError(f"asset {self.id}: firm capacity exceeds capacity")
        elif has_cm:
            raise ValueError(f"asset {self.id}: cm fields set on a {self.entry_channel} asset")

    @property
    def operating(self) -> bool:
        return self.steps_to_operation == 0 and self.remaining_life_steps > 0

    @property
    def in_pipeline(self) -> bool:
        return self.steps_to_operation > 0


def marginal_bid(tech: Technology, carbon_tax: float, year: float) -> float:
    return cost_at_year(tech, year).opex_var + tech.emission_factor * carbon_tax


class HourlyClearing(NamedTuple):
    price: float
    dispatched: np.ndarray  # per bid, MWh
    lost_load: float
    demand_served: float


class DayClearing(NamedTuple):
    prices: np.ndarray  # (H,)
    dispatched: np.ndarray  # (n_bids, H)
    lost_load: np.ndarray  # (H,)


def clear_day(quantities, prices, demand, voll: float) -> DayClearing:
    """Merit-order clearing of several hours with fixed bid prices.

    ``quantities`` is (n_bids, H), ``prices`` (n_bids,), ``demand`` (H,).
    Equal-price bids are taken in input order, so callers pass assets by id.
    Bids priced above ``voll`` are never accepted.
    """
    demand = np.asarray(demand, dtype=float)
    H = demand.shape[0]
    q = np.asarray(quantities, dtype=float).reshape(-1, H)
    p = np.asarray(prices, dtype=float).reshape(-1)
    if np.any(q < 0) or np.any(p < 0):
        raise ValueError("bid quantities and prices must be >= 0")
    if np.any(demand < 0):
        raise ValueError("demand must be >= 0")
    n = q.shape[0]
    q = np.where((p > voll)[:, None], 0.0, q)
    if n == 0:
        return DayClearing(np.where(demand > 0, voll, 0.0), np.zeros((0, H)), demand.copy())

    order = np.argsort(p, kind="stable")  # equal prices keep input (asset id) order
    Q = q[order]
    C = np.cumsum(Q, axis=0)
    eps = 1e-9 * np.maximum(1.0, demand)
    covered = C >= demand - eps
    has = covered.any(axis=0)
    m = np.where(has, covered.argmax(axis=0), n - 1)
    disp = np.clip(demand - (C - Q), 0.0, Q)
    disp[np.arange(n)[:, None] > m] = 0.0
    zero = demand <= 0
    disp[:, zero] = 0.0
    price = np.where(has, p[order][m], voll)
    price = np.where(zero, 0.0, price)
    lost = np.where(has | zero, 0.0, demand - C[-1])
    out = np.empty_like(disp)
    out[order] = disp
    return DayClearing(price, out, lost)


def clear_hour(supply_bids: Sequence[tuple[float, float]], demand: float, voll: float) -> HourlyClearing:
    """Clear one hour; ``supply_bids`` are (quantity MWh, price) pairs."""
    bids = list(supply_bids)
    q = np.array([b[0] for b in bids], dtype=float).reshape(-1, 1)
    p = np.array([b[1] for b in bids], dtype=float)
    out = clear_day(q, p, np.array([float(demand)]), voll)
    lost = float(out.lost_load[0])
    return HourlyClearing(float(out.prices[0]), out.dispatched[:, 0], lost, float(demand) - lost)


def system_margins(capacity_mw, cf, availability, demand) -> np.ndarray:
    """Available generation minus demand per hour.

    ``capacity_mw`` and ``availability`` are per generating asset, ``cf`` is
    (n_assets, 24).  Storage is left out by the caller.
    """
    cap = np.asarray(capacity_mw, dtype=float).reshape(-1, 1)
    avail = np.asarray(availability, dtype=float).reshape(-1, 1)
    cf = np.asarray(cf, dtype=float).reshape(cap.shape[0], -1)
    return (cap * cf * avail).sum(axis=0) - np.asarray(demand, dtype=float)


class EssUnit(NamedTuple):
    power_mw: float
    energy_mwh: float
    efficiency: float = 0.9


@dataclass(frozen=True)
class EssSchedule:
    net_mw: np.ndarray  # positive = discharge
    soc_start: float
    soc_end: float
    spill_mwh: float = 0.0

    @property
    def charge(self) -> np.ndarray:
        return np.maximum(-self.net_mw, 0.0)

    @property
    def discharge(self) -> np.ndarray:
        return np.maximum(self.net_mw, 0.0)


def _charge_order(margins: np.ndarray) -> list[int]:
    return sorted(range(len(margins)), key=lambda h: (-margins[h], h))


def _discharge_order(margins: np.ndarray) -> list[int]:
    return sorted(range(len(margins)), key=lambda h: (margins[h], -h))


def _base_cycle(margins: np.ndarray, unit: EssUnit) -> tuple[np.ndarray, np.ndarray]:
    """One complete cycle: charge at high-margin hours, discharge at low ones.

    Charge and discharge alternately claim their next preferred free hour so
    that long-duration units cannot starve one side.  Charging prefers earlier
    hours on equal margins, discharging prefers later ones.
    """
    H = len(margins)
    ch = np.zeros(H)
    dis = np.zeros(H)
    P, E, eta = unit
    if P <= 0 or E <= 0:
        return ch, dis
    need_c, need_d = E / eta, E
    c_iter = iter(_charge_order(margins))
    d_iter = iter(_discharge_order(margins))
    used = np.zeros(H, dtype=bool)
    while need_c > 1e-12 or need_d > 1e-12:
        progressed = False
        if need_c > 1e-12:
            for h in c_iter:
                if not used[h]:
                    used[h] = True
                    ch[h] = min(P, need_c)
                    need_c -= ch[h]
                    progressed = True
                    break
        if need_d > 1e-12:
            for h in d_iter:
                if not used[h]:
                    used[h] = True
                    dis[h] = min(P, need_d)
                    need_d -= dis[h]
                    progressed = True
                    break
        if not progressed:
            break
    stored, released = eta * ch.sum(), dis.sum()
    if stored > released + 1e-12:
        ch *= released / stored
    elif released > stored + 1e-12:
        dis *= stored / released if released > 0 else 0.0
    return ch, dis


def schedule_short_ess(margins, ess_units: Sequence[EssUnit]) -> list[EssSchedule]:
    """Greedy complete-cycle schedule for each unit, in order.

    Each unit sees the margins left after the units scheduled before it.
    """
    m = np.asarray(margins, dtype=float).copy()
    out = []
    for unit in ess_units:
        ch, dis = _base_cycle(m, unit)
        net = dis - ch
        path = np.concatenate([[0.0], np.cumsum(unit.efficiency * ch - dis)])
        start = float(-path.min())
        end = start + float(path[-1])
        out.append(EssSchedule(net, start, end))
        m += net
    return out


def _walk_reservoir(ch, dis, inflow, soc_start: float, E: float, eta: float):
    """Apply a planned profile hour by hour inside the reservoir bounds.

    Charging is cut (and inflow spilled) at the top, discharge is cut at the
    bottom.  Returns the realised (charge, discharge, soc_end, spill).
    """
    ch = ch.copy()
    dis = dis.copy()
    soc = soc_start
    spill = 0.0
    for h in range(len(ch)):
        new = soc + inflow[h] + eta * ch[h] - dis[h]
        if new > E:
            excess = new - E
            cut = min(ch[h], excess / eta)
            ch[h] -= cut
            excess -= cut * eta
            spill += excess
            new = E
        if new < 0:
            dis[h] += new  # new is negative, discharge shrinks by the shortfall
            new = 0.0
        soc = new
    return ch, dis, soc, spill


def _shift(ch, dis, h: int, amount: float, P: float, eta: float, up: bool) -> None:
    """Move up to ``amount`` MWh of end-of-day energy at hour ``h`` (in place)."""
    if up:
        cut = min(dis[h], amount)
        dis[h] -= cut
        amount -= cut
        if dis[h] == 0:
            ch[h] += min(P - ch[h], amount / eta)
    else:
        cut = min(ch[h], amount / eta)
        ch[h] -= cut
        amount -= cut * eta
        if ch[h] == 0:
            dis[h] += min(P - dis[h], amount)


def schedule_mid_ess(margins, unit: EssUnit, inflow_mwh, target_soc: float, soc_start: float) -> EssSchedule:
    """Balanced cycle shifted to move the reservoir toward ``target_soc``.

    Inflow enters storage directly.  The base cycle is shifted hour by hour,
    taking energy out at low-margin hours and putting it in at high-margin
    ones, until the walked trajectory ends at the target.  A shift is kept
    only if it brings the end state closer, so spill at the top and empty
    hours at the bottom are accounted for.  Unreachable targets end at the
    nearest reachable state.
    """
    if not 0 <= target_soc <= 1:
        raise ValueError("target_soc must lie in [0, 1]")
    m = np.asarray(margins, dtype=float)
    inflow = np.asarray(inflow_mwh, dtype=float)
    P, E, eta = unit
    soc_start = float(min(max(soc_start, 0.0), E))
    ch, dis = _base_cycle(m, unit)
    goal = target_soc * E
    tol = 1e-9 * max(E, 1.0)
    for _ in range(4):
        end = _walk_reservoir(ch, dis, inflow, soc_start, E, eta)[2]
        gap = goal - end
        if abs(gap) <= tol:
            break
        improved = False
        order = _charge_order(m) if gap > 0 else _discharge_order(m)
        for h in order:
            if abs(gap) <= tol:
                break
            trial_c, trial_d = ch.copy(), dis.copy()
            _shift(trial_c, trial_d, h, abs(gap), P, eta, gap > 0)
            new_gap = goal - _walk_reservoir(trial_c, trial_d, inflow, soc_start, E, eta)[2]
            if abs(new_gap) < abs(gap) - 1e-12:
                ch, dis, gap = trial_c, trial_d, new_gap
                improved = True
        if not improved:
            break
    ch, dis, soc, spill = _walk_reservoir(ch, dis, inflow, soc_start, E, eta)
    return EssSchedule(dis - ch, soc_start, soc, spill)


class CreditResult(NamedTuple):
    credits: dict[str, float]
    critical_hour: int
    adequacy_margin: float
    margins: np.ndarray


def capacity_credits(
    capacity_by_tech: Mapping[str, float],
    technologies: Sequence[Technology],
    peak_day: RepresentativeDay,
    demand_grown,
) -> CreditResult:
    """Expected adequacy balance on the peak day.

    Generation counts at capacity x CF x mean availability; storage of each
    technology is pooled into one unit and scheduled as a complete cycle on
    the resulting margins.  The credit of a technology is its expected
    available fraction at the lowest-margin hour.
    """
    demand = np.asarray(demand_grown, dtype=float)
    gen = np.zeros_like(demand)
    for t in technologies:
        if not t.is_ess:
            gen += capacity_by_tech.get(t.id, 0.0) * peak_day.cf(t.cf_profile) * t.availability_mean
    margins = gen - demand
    ess = [t for t in technologies if t.is_ess]
    units = [
        EssUnit(capacity_by_tech.get(t.id, 0.0) * t.availability_mean,
                capacity_by_tech.get(t.id, 0.0) * t.availability_mean * t.ess_duration_hours, t.efficiency)
        for t in ess
    ]
    schedules = schedule_short_ess(margins, units)
    for s in schedules:
        margins = margins + s.net_mw
    crit = int(np.argmin(margins))
    credits = {}
    for t in technologies:
        if t.is_ess:
            continue
        credits[t.id] = float(np.clip(peak_day.cf(t.cf_profile)[crit] * t.availability_mean, 0.0, 1.0))
    for t, s in zip(ess, schedules):
        cap = capacity_by_tech.get(t.id, 0.0)
        if cap > 0:
            credits[t.id] = float(np.clip(max(s.net_mw[crit], 0.0) / cap, 0.0, 1.0))
        else:
            # a marginal unit would discharge at the critical hour
            credits[t.id] = float(t.availability_mean)
    return CreditResult(credits, crit, float(margins[crit]), margins)
