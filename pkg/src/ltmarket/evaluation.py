"""Frozen-policy simulation, concentration/penalty/league metrics and summaries.

Episode records are JSON lines: one ``header`` line with the scenario, then
``step`` lines (the environment's info ledger) and one ``episode_end`` line per
episode.
"""

from __future__ import annotations

import csv
import io
import json
import math
from fractions import Fraction
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import absorbing_payment
from .ippo.checkpoint import PolicySet
from .ippo.rollout import run_episodes
from .market import EssUnit, marginal_bid, schedule_short_ess
from .scenario import Scenario, cost_at_year

RECORD_SCHEMA = 1


class RecordError(ValueError):
    """Malformed or empty record file."""


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_jsonable)


@dataclass
class EpisodeRecord:
    episode: int
    seed: int
    steps: list[dict]
    returns: dict[str, float] = field(default_factory=dict)

    @property
    def final(self) -> dict:
        return self.steps[-1]

    @property
    def final_capacity(self) -> dict[str, dict[str, dict[str, float]]]:
        return self.final.get("capacity", {})

    @property
    def investment_npv(self) -> dict[int, float]:
        return {int(k): v for k, v in self.final.get("investment_npv", {}).items()}

    @property
    def investments(self) -> list[dict]:
        return [inv for s in self.steps for inv in s.get("investments", [])]

    @property
    def emissions(self) -> list[float]:
        return [s["emissions_t"] for s in self.steps]


# --------------------------------------------------------------------------
# simulation and record files


def simulation_seeds(seed: int, episodes: int) -> list[int]:
    ss = np.random.SeedSequence([seed, 0x5151])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(episodes)]


def simulate(policies: PolicySet | Mapping[str, dict], scenario: Scenario, episodes: int, seed: int,
             out_path: str | Path | None = None, workers: int = 1) -> list[EpisodeRecord]:
    """Roll out frozen policies (actions still sampled) and stream records to ``out_path``."""
    if isinstance(policies, PolicySet):
        policies.check_compatible(scenario)
        params = policies.numpy_params()
    else:
        params = dict(policies)
    seeds = simulation_seeds(seed, episodes)
    records = []
    fh = None
    if out_path is not None:
        tmp = Path(str(out_path) + ".tmp")
        fh = open(tmp, "w")
        fh.write(dumps({"type": "header", "schema": RECORD_SCHEMA, "scenario": scenario.to_dict(),
                        "scenario_hash": scenario.content_hash(), "seed": seed, "episodes": episodes}) + "\n")
    try:
        # chunk so records stream to disk while the pool works
        chunk = max(1, workers)
        for start in range(0, episodes, chunk):
            eps = run_episodes(scenario, params, seeds[start:start + chunk], workers, record=True)
            for i, ep in enumerate(eps):
                rec = EpisodeRecord(start + i, ep.seed, ep.infos, ep.returns)
                records.append(rec)
                if fh:
                    for s in ep.infos:
                        fh.write(dumps({"type": "step", "episode": rec.episode, **s}) + "\n")
                    fh.write(dumps({"type": "episode_end", "episode": rec.episode, "seed": rec.seed,
                                    "returns": rec.returns}) + "\n")
    finally:
        if fh:
            fh.close()
    if out_path is not None:
        Path(str(out_path) + ".tmp").replace(out_path)
    return records


def read_records(path: str | Path) -> tuple[dict, list[EpisodeRecord]]:
    header = None
    steps: dict[int, list[dict]] = defaultdict(list)
    ends: dict[int, dict] = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec.pop("type")
            except (ValueError, KeyError, AttributeError, TypeError):
                raise RecordError(f"{path}: malformed record at line {n}") from None
            if kind == "header":
                header = rec
            elif kind == "step":
                steps[rec.pop("episode")].append(rec)
            elif kind == "episode_end":
                ends[rec["episode"]] = rec
            else:
                raise RecordError(f"{path}: unknown record type {kind!r} at line {n}")
    if header is None:
        raise RecordError(f"{path}: no header record (empty file?)")
    if not ends:
        raise RecordError(f"{path}: no complete episodes")
    out = []
    for ep in sorted(ends):
        if not steps.get(ep):
            raise RecordError(f"{path}: episode {ep} has no steps")
        out.append(EpisodeRecord(ep, ends[ep]["seed"], steps[ep], ends[ep]["returns"]))
    return header, out


# --------------------------------------------------------------------------
# market concentration and returns


def compute_hhi(capacities: Mapping[str, float]) -> float:
    """10000 times the sum of squared capacity shares.

    Computed in exact rational arithmetic so equal shares give exactly 10000/n.
    """
    vals = [Fraction(float(v)) for v in capacities.values()]
    total = sum(vals, Fraction(0))
    if not total > 0:
        raise ValueError("total capacity must be > 0")
    return float(10000 * sum((v * v for v in vals), Fraction(0)) / (total * total))


def agent_capacity(table: Mapping[str, Mapping[str, Mapping[str, float]]]) -> dict[str, float]:
    return {a: math.fsum(mw for ch in techs.values() for mw in ch.values()) for a, techs in table.items()}


def npv(rate: float, flows: Sequence[float]) -> float:
    return math.fsum(f / (1.0 + rate) ** k for k, f in enumerate(flows))


def compute_irr(flows: Sequence[float], lo: float = -0.99, hi: float = 10.0, tol: float = 1e-6) -> float | None:
    """Annual IRR by bisection, or None when NPV does not change sign on (lo, hi)."""
    f_lo, f_hi = npv(lo, flows), npv(hi, flows)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        return None
    sign_lo = f_lo > 0
    while hi - lo > tol * 1e-3:
        mid = 0.5 * (lo + hi)
        f_mid = npv(mid, flows)
        if f_mid == 0:
            return mid
        if (f_mid > 0) == sign_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def yearly_investment_flows(record: EpisodeRecord, by: str = "agent") -> dict[str, list[float]]:
    """Annual net cash of new investments (existing fleet excluded), per agent or per technology."""
    years = sorted({s["year"] for s in record.steps})
    first = years[0]
    out: dict[str, list[float]] = defaultdict(lambda: [0.0] * len(years))
    for s in record.steps:
        for agent, ledger in s["cashflows"].items():
            for ch, techs in ledger.items():
                if ch == "existing":
                    continue
                for tech, v in techs.items():
                    out[agent if by == "agent" else tech][s["year"] - first] += v
    return dict(out)


# --------------------------------------------------------------------------
# penalty: unexploited profitable entry plus realized losses


def _step_calendar(scn: Scenario, n_steps: int):
    spy = scn.steps_per_year
    return [((1.0 + scn.discount_rate) ** (-t / spy)) for t in range(n_steps)]


def virtual_plant_npv(scn: Scenario, tech_id: str, channel: str, build_step: int, steps: Sequence[Mapping],
                      mw: float, contract_price: float = 0.0, credit: float = 0.0) -> float:
    """NPV at episode start of ``mw`` of ``tech_id`` committed at ``build_step``.

    The plant is a price taker: it produces at its expected availability
    whenever the realized spot price covers its marginal bid.  ``contract_price``
    is the CfD strike or the CM clearing price (thousand currency per firm MW-year).
    Cash flows run to the end of the recorded steps plus the terminal annuity.
    """
    tech = scn.tech(tech_id)
    spy = scn.steps_per_year
    days = scn.days_per_step
    disc = _step_calendar(scn, len(steps))
    n_build = tech.construction_years * spy
    installment = mw * cost_at_year(tech, scn.year_of_step(build_step)).capex_per_mw / max(n_build, 1)
    value = 0.0
    for k in range(max(n_build, 1)):
        if build_step + k < len(steps):
            value -= installment * disc[build_step + k]
    start = build_step + max(n_build, 1)
    life = tech.lifetime_years * spy
    incomes = []
    for t in range(start, min(len(steps), start + life)):
        s = steps[t]
        prices = np.asarray(s["prices"], dtype=float)
        year = s["year"]
        fixed = cost_at_year(tech, year).opex_fixed * mw / spy
        if tech.is_ess:
            unit = EssUnit(mw * tech.availability_mean, mw * tech.ess_duration_hours, tech.efficiency)
            net = schedule_short_ess(-prices, [unit])[0].net_mw
            profit = days * float(prices @ net) - days * tech.opex_var * float(np.maximum(net, 0).sum()) - fixed
        else:
            day = scn.rep_days[s["rep_day"]]
            q = mw * day.cf(tech.cf_profile) * tech.availability_mean
            bid = marginal_bid(tech, s["carbon_tax"], year)
            q = np.where(prices >= bid, q, 0.0)
            var = cost_at_year(tech, year).opex_var + tech.emission_factor * s["carbon_tax"]
            energy = days * float(q.sum())
            if channel == "cfd":
                profit = (contract_price - var) * energy - fixed
            else:
                profit = days * float(prices @ q) - var * energy - fixed
        if channel == "cm":
            firm = mw * credit
            profit += firm * contract_price * 1000.0 / spy
            profit -= days * float(np.maximum(prices - scn.scarcity_strike, 0).sum()) * firm
        incomes.append(profit)
        value += profit * disc[t]
    if incomes:
        remaining = (life - len(incomes)) / spy
        value += absorbing_payment(float(np.mean(incomes)) * spy, scn.discount_rate, remaining) * disc[-1]
    return value


def _entry_opportunities(scn: Scenario, steps: Sequence[Mapping], agent: str):
    """(channel, tech) -> list of (step, contract price, credit) where entry was possible."""
    spec = next(a for a in scn.agents if a.id == agent)
    n = len(steps)
    spy = scn.steps_per_year
    out: dict[tuple[str, str], list] = defaultdict(list)
    for t, s in enumerate(steps):
        year = s["year"]
        for tech_id in spec.technologies:
            tech = scn.tech(tech_id)
            if tech.construction_years * spy >= n - t or tech.max_invest_mw <= 0:
                continue
            if scn.merchant_enabled and t % spy == scn.slots["merchant"] and not scn.is_banned(agent, tech_id, "merchant", year):
                out[("merchant", tech_id)].append((t, 0.0, 0.0))
            for auc in s.get("auctions", []):
                ch = auc["market"]
                if ch == "cfd" and not tech.is_res:
                    continue
                if scn.is_banned(agent, tech_id, ch, year):
                    continue
                credit = auc.get("credits", {}).get(tech_id, 0.0)
                if ch == "cm" and credit <= 0:
                    continue
                cap = scn.cm_price_cap if ch == "cm" else scn.cfd_price_cap
                price = auc["clearing_price"] if auc["clearing_price"] is not None and auc["unfilled"] <= 0 else cap
                out[(ch, tech_id)].append((t, price, credit))
    return out


def compute_penalty(record: EpisodeRecord, scn: Scenario) -> list[dict]:
    """Rows of (agent, market, tech, unexploited entry value, realized losses, penalty)."""
    rows = []
    npv_by_asset = record.investment_npv
    losses: dict[tuple[str, str, str], float] = defaultdict(float)
    for inv in record.investments:
        v = npv_by_asset.get(inv["asset"])
        if v is not None:
            losses[(inv["agent"], inv["channel"], inv["tech"])] += max(-v, 0.0)
    for spec in scn.agents:
        opps = _entry_opportunities(scn, record.steps, spec.id)
        keys = set(opps) | {(ch, te) for (ag, ch, te) in losses if ag == spec.id}
        for ch, tech_id in sorted(keys):
            tech = scn.tech(tech_id)
            lump = tech.max_invest_mw / (scn.quantity_steps - 1)
            best = max((virtual_plant_npv(scn, tech_id, ch, t, record.steps, lump, price, credit)
                        for t, price, credit in opps.get((ch, tech_id), [])), default=0.0)
            lost = losses.get((spec.id, ch, tech_id), 0.0)
            rows.append({"episode": record.episode, "agent": spec.id, "market": ch, "tech": tech_id,
                         "virtual_npv": best, "unexploited": max(best, 0.0), "losses": lost,
                         "penalty": max(best, 0.0) + lost})
    return rows


def agent_penalty(rows: Iterable[Mapping]) -> dict[str, float]:
    out: dict[str, float] = defaultdict(float)
    for r in rows:
        out[r["agent"]] += r["penalty"]
    return dict(out)


# --------------------------------------------------------------------------
# league


@dataclass
class LeagueTable:
    names: list[str]
    scores: list[float]
    appearances: list[int]
    ranks: list[int]

    def rows(self) -> list[dict]:
        return [{"rank": r, "config": n, "score": s, "appearances": a}
                for r, n, s, a in sorted(zip(self.ranks, self.names, self.scores, self.appearances))]


def run_league(policy_sets: Sequence[PolicySet], scenario: Scenario, rounds: int, episodes_per_lineup: int,
               seed: int, names: Sequence[str] | None = None, workers: int = 1) -> LeagueTable:
    """Random lineups; each configuration's score is its mean normalized per-appearance reward."""
    k = len(policy_sets)
    names = list(names or [f"config_{i}" for i in range(k)])
    if len(set(names)) != k:
        raise ValueError("configuration names must be unique")
    agents = [a.id for a in scenario.agents]
    for ps in policy_sets:
        ps.check_compatible(scenario)
        missing = set(agents) - set(ps.agents)
        if missing:
            raise ValueError(f"checkpoint lacks policies for {sorted(missing)}")
    params = [ps.numpy_params() for ps in policy_sets]
    rng = np.random.default_rng([seed, 0x1EA6])
    totals = np.zeros(k)
    rounds_seen = np.zeros(k, dtype=int)
    appearances = np.zeros(k, dtype=int)
    for rnd in range(rounds):
        lineup = rng.integers(k, size=len(agents))
        policies = {a: params[c][a] for a, c in zip(agents, lineup)}
        seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=episodes_per_lineup)]
        eps = run_episodes(scenario, policies, seeds, workers)
        score = np.zeros(k)
        count = np.zeros(k)
        for ep in eps:
            for a, c in zip(agents, lineup):
                score[c] += ep.returns[a]
                count[c] += 1
        present = count > 0
        avg = np.where(present, score / np.maximum(count, 1), 0.0)
        norm = np.max(np.abs(avg[present]))
        if norm > 0:
            avg = avg / norm
        totals[present] += avg[present]
        rounds_seen[present] += 1
        appearances += count.astype(int)
    final = [float(totals[i] / rounds_seen[i]) if rounds_seen[i] else -math.inf for i in range(k)]
    order = sorted(range(k), key=lambda i: (-final[i], i))
    ranks = [0] * k
    for r, i in enumerate(order, 1):
        ranks[i] = r
    return LeagueTable(names, final, appearances.tolist(), ranks)


# --------------------------------------------------------------------------
# outcome summaries


def step_emissions(scn: Scenario, step: Mapping) -> float:
    return math.fsum(mwh * scn.tech(t).emission_factor for t, mwh in step["dispatch_mwh"].items())


def step_total_price(step: Mapping) -> float:
    """Consumer payment per MWh served: spot plus CM net premiums plus CfD transfers."""
    served = step["demand_mwh"] - step["lost_load_mwh"]
    pay = step["spot_payments"] + step["cm_premiums"] - step["cm_option_refunds"] + step["cfd_transfers"]
    return pay / served if served > 0 else float("nan")


def step_spot_price(step: Mapping) -> float:
    """Demand-weighted spot price over served energy."""
    served = step["demand_mwh"] - step["lost_load_mwh"]
    return step["spot_payments"] / served if served > 0 else float("nan")


def capacity_bands(records: Sequence[EpisodeRecord], q=(5, 50, 95)) -> list[dict]:
    """Installed MW by year x tech x channel, percentiles across episodes."""
    traces: dict[tuple[int, str, str], dict[int, float]] = defaultdict(dict)
    for rec in records:
        for s in rec.steps:
            if "capacity" not in s:
                continue
            agg: dict[tuple[str, str], float] = defaultdict(float)
            for techs in s["capacity"].values():
                for tech, chans in techs.items():
                    for ch, mw in chans.items():
                        agg[(tech, ch)] += mw
            for (tech, ch), mw in agg.items():
                traces[(s["year"], tech, ch)][rec.episode] = mw
    episodes = [r.episode for r in records]
    rows = []
    for (year, tech, ch) in sorted(traces):
        vals = np.array([traces[(year, tech, ch)].get(e, 0.0) for e in episodes])
        p = np.percentile(vals, q)
        rows.append({"year": year, "tech": tech, "channel": ch, "mean": float(vals.mean()),
                     **{f"p{qq}": float(v) for qq, v in zip(q, p)}})
    return rows


def aggregate_results(records: Sequence[EpisodeRecord], scn: Scenario) -> dict[str, list[dict]]:
    prices, emissions = [], []
    for rec in records:
        for s in rec.steps:
            prices.append({"episode": rec.episode, "step": s["step"], "year": s["year"],
                           "spot_price": step_spot_price(s), "total_price": step_total_price(s),
                           "consumer_payment": s["consumer_payment"], "demand_mwh": s["demand_mwh"],
                           "lost_load_mwh": s["lost_load_mwh"]})
            emissions.append({"episode": rec.episode, "step": s["step"], "year": s["year"],
                              "emissions_t": step_emissions(scn, s)})
    return {"prices": prices, "emissions": emissions, "capacity": capacity_bands(records)}


# --------------------------------------------------------------------------
# CSV export

COLUMNS = {
    "hhi": ["episode", "hhi"],
    "penalty": ["episode", "agent", "market", "tech", "virtual_npv", "unexploited", "losses", "penalty"],
    "irr": ["episode", "kind", "key", "irr"],
    "prices": ["episode", "step", "year", "spot_price", "total_price", "consumer_payment", "demand_mwh",
               "lost_load_mwh"],
    "emissions": ["episode", "step", "year", "emissions_t"],
    "capacity": ["year", "tech", "channel", "mean", "p5", "p50", "p95"],
}


def summary_tables(records: Sequence[EpisodeRecord], scn: Scenario) -> dict[str, list[dict]]:
    tables = aggregate_results(records, scn)
    tables["hhi"] = [{"episode": r.episode, "hhi": compute_hhi(agent_capacity(r.final_capacity))}
                     for r in records if sum(agent_capacity(r.final_capacity).values()) > 0]
    tables["penalty"] = [row for r in records for row in compute_penalty(r, scn)]
    irr = []
    for r in records:
        for kind in ("agent", "tech"):
            for key, flows in sorted(yearly_investment_flows(r, kind).items()):
                irr.append({"episode": r.episode, "kind": kind, "key": key, "irr": compute_irr(flows)})
    tables["irr"] = irr
    return tables


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def write_tables(tables: Mapping[str, list[dict]], out_dir: str | Path) -> list[Path]:
    """Render every table first, then write, so a failure leaves no partial output."""
    out = Path(out_dir)
    rendered = {}
    for name, cols in COLUMNS.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in tables[name]:
            w.writerow([_fmt(row[c]) for c in cols])
        rendered[name] = buf.getvalue()
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in rendered.items():
        p = out / f"{name}.csv"
        p.write_text(text)
        paths.append(p)
    return paths
