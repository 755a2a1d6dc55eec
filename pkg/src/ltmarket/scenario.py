"""Scenario loading, technology catalog and time-series aggregation.

A scenario is a YAML document (``schema_version: 1``) plus one CSV file per
hourly series.  Everything is validated on load and frozen afterwards, so a
:class:`Scenario` can be shared freely between environment instances.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import yaml

SCHEMA_VERSION = 1
HOURS_PER_YEAR = 8760

TECH_ORDER = (
    "solar",
    "onshore_wind",
    "offshore_wind",
    "coal",
    "ocgt",
    "ccgt",
    "ess_short",
    "ess_mid",
)
SERIES_NAMES = ("demand", "cf_solar", "cf_onshore", "cf_offshore", "hydro_inflow")
CF_SERIES = {"solar": "cf_solar", "onshore": "cf_onshore", "offshore": "cf_offshore"}
CHANNELS = ("existing", "merchant", "cfd", "cm")
AVAILABILITY_LEVELS = np.array([0.0, 0.5, 1.0])

# Unit labels accepted in the ``units`` block.  Only one convention is
# supported, the block exists so that config files state it explicitly.
UNITS = {
    "currency": None,
    "capex": "thousand_currency_per_mw",
    "opex_fixed_abs": "currency_per_mw_year",
    "opex_var": "currency_per_mwh",
    "carbon_tax": "currency_per_tco2",
    "voll": "currency_per_mwh",
    "cfd_price": "currency_per_mwh",
    "cm_price": "thousand_currency_per_mw_firm_year",
}


class ScenarioError(ValueError):
    """Invalid scenario content.  ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def interp_schedule(schedule: Mapping[int, float], year: float) -> float:
    """Piecewise-linear lookup, clamped to the first/last anchor."""
    if not schedule:
        return 0.0
    xs = sorted(schedule)
    ys = [float(schedule[x]) for x in xs]
    return float(np.interp(year, xs, ys))


@functools.lru_cache(maxsize=None)
def availability_probabilities(mean: float, std: float) -> tuple[float, float, float]:
    """Probabilities of availability 0, 0.5 and 1 matching a mean and std.

    From p100 + p50/2 = mean and p100 + p50/4 = std^2 + mean^2.
    """
    second = std * std + mean * mean
    p50 = 4.0 * (mean - second)
    p100 = mean - 0.5 * p50
    p0 = 1.0 - p50 - p100
    tol = 1e-12
    if min(p0, p50, p100) < -tol or max(p0, p50, p100) > 1 + tol:
        raise ScenarioError(
            "availability",
            f"infeasible moments (mean={mean}, std={std}) give p=({p0:.4f}, {p50:.4f}, {p100:.4f})",
        )
    probs = np.clip([p0, p50, p100], 0.0, 1.0)
    probs = probs / probs.sum()
    return float(probs[0]), float(probs[1]), float(probs[2])


class Costs(NamedTuple):
    capex: float  # thousand currency per MW
    opex_fixed: float  # currency per MW-year
    opex_var: float  # currency per MWh

    @property
    def capex_per_mw(self) -> float:
        return self.capex * 1000.0


@dataclass(frozen=True)
class Technology:
    id: str
    capex_by_year: Mapping[int, float]
    opex_fixed_pct: float
    opex_var: float
    emission_factor: float
    construction_years: int
    lifetime_years: int
    max_invest_mw: float
    availability_mean: float = 0.925
    availability_std: float = 0.23
    is_res: bool = False
    ess_duration_hours: float = 0.0
    efficiency: float = 0.90
    cf_profile: str | None = None
    opex_fixed_abs_by_year: Mapping[int, float] | None = None
    investable: bool = True

    def __post_init__(self):
        if self.id not in TECH_ORDER:
            raise ScenarioError("technologies", f"unknown technology id {self.id!r}")
        where = f"technologies.{self.id}"
        if self.investable:
            if not self.capex_by_year:
                raise ScenarioError(f"{where}.capex_by_year", "no anchors")
            if any(v <= 0 for v in self.capex_by_year.values()):
                raise ScenarioError(f"{where}.capex_by_year", "anchors must be strictly positive")
        if not 0 < self.availability_mean <= 1:
            raise ScenarioError(f"{where}.availability_mean", "must lie in (0, 1]")
        if self.availability_std < 0:
            raise ScenarioError(f"{where}.availability_std", "must be >= 0")
        try:
            availability_probabilities(self.availability_mean, self.availability_std)
        except ScenarioError as exc:
            raise ScenarioError(f"{where}.availability_std", str(exc)) from None
        if (self.is_res or self.is_ess) and self.emission_factor != 0:
            raise ScenarioError(f"{where}.emission_factor", "must be 0 for RES and storage")
        if self.construction_years < 0:
            raise ScenarioError(f"{where}.construction_years", "must be >= 0")
        if self.lifetime_years <= 0:
            raise ScenarioError(f"{where}.lifetime_years", "must be > 0")
        if self.max_invest_mw < 0:
            raise ScenarioError(f"{where}.max_invest_mw", "must be >= 0")
        if self.is_ess and not (self.ess_duration_hours > 0 and 0 < self.efficiency <= 1):
            raise ScenarioError(f"{where}.ess_duration_hours", "storage needs duration > 0 and efficiency in (0, 1]")
        if self.cf_profile is not None and self.cf_profile not in CF_SERIES:
            raise ScenarioError(f"{where}.cf_profile", f"unknown profile {self.cf_profile!r}")

    @property
    def is_ess(self) -> bool:
        return self.id.startswith("ess_")

    @property
    def availability_probs(self) -> tuple[float, float, float]:
        return availability_probabilities(self.availability_mean, self.availability_std)


def cost_at_year(tech: Technology, year: float) -> Costs:
    capex = interp_schedule(tech.capex_by_year, year)
    if tech.opex_fixed_abs_by_year:
        fixed = interp_schedule(tech.opex_fixed_abs_by_year, year)
    else:
        fixed = tech.opex_fixed_pct * capex * 1000.0
    return Costs(capex, fixed, tech.opex_var)


def sample_availability(rng: np.random.Generator, tech: Technology, size=None):
    """Draw availability on {0, 0.5, 1}; returns a float or an array if ``size`` is given."""
    probs = tech.availability_probs
    if size is None:
        u = rng.random()
        return float(AVAILABILITY_LEVELS[np.searchsorted(np.cumsum(probs), u, side="right").clip(max=2)])
    u = rng.random(size)
    idx = np.searchsorted(np.cumsum(probs), u, side="right").clip(max=2)
    return AVAILABILITY_LEVELS[idx]


# Reference catalog.  CAPEX in thousand currency per MW.
REFERENCE_TECHNOLOGIES: dict[str, dict[str, Any]] = {
    "solar": dict(capex_by_year={2020: 562, 2040: 323}, opex_fixed_pct=0.025, opex_var=1.0,
                  emission_factor=0.0, construction_years=2, lifetime_years=35, is_res=True, cf_profile="solar"),
    "onshore_wind": dict(capex_by_year={2020: 1183, 2040: 1033}, opex_fixed_pct=0.017, opex_var=1.5,
                         emission_factor=0.0, construction_years=3, lifetime_years=28, is_res=True,
                         cf_profile="onshore"),
    "offshore_wind": dict(capex_by_year={2020: 2437, 2040: 2009}, opex_fixed_pct=0.023, opex_var=1.5,
                          emission_factor=0.0, construction_years=4, lifetime_years=30, is_res=True,
                          cf_profile="offshore"),
    "coal": dict(capex_by_year={2020: 3827, 2040: 3827}, opex_fixed_pct=0.0131, opex_var=32.0,
                 emission_factor=1.01, construction_years=3, lifetime_years=40),
    "ocgt": dict(capex_by_year={2020: 480, 2040: 443}, opex_fixed_pct=0.033, opex_var=46.0,
                 emission_factor=0.34, construction_years=3, lifetime_years=25),
    "ccgt": dict(capex_by_year={2020: 931, 2040: 860}, opex_fixed_pct=0.0177, opex_var=64.0,
                 emission_factor=0.495, construction_years=2, lifetime_years=25),
    "ess_short": dict(capex_by_year={2020: 562, 2040: 323}, opex_fixed_pct=0.0,
                      opex_fixed_abs_by_year={2020: 32000, 2040: 11700}, opex_var=0.0, emission_factor=0.0,
                      construction_years=2, lifetime_years=25, ess_duration_hours=4.0),
    "ess_mid": dict(capex_by_year={}, opex_fixed_pct=0.0, opex_fixed_abs_by_year={2020: 32000, 2040: 11700},
                    opex_var=0.0, emission_factor=0.0, construction_years=0, lifetime_years=100,
                    ess_duration_hours=34.0, investable=False),
}


@dataclass(frozen=True, eq=False)
class RepresentativeDay:
    demand: np.ndarray
    cf_solar: np.ndarray
    cf_onshore: np.ndarray
    cf_offshore: np.ndarray
    hydro_inflow: np.ndarray
    months_represented: float

    def __post_init__(self):
        for name in SERIES_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (24,):
                raise ScenarioError(f"rep_day.{name}", f"expected 24 hours, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ScenarioError(f"rep_day.{name}", "non-finite values")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.demand < 0):
            raise ScenarioError("rep_day.demand", "negative demand")
        if np.any(self.hydro_inflow < 0):
            raise ScenarioError("rep_day.hydro_inflow", "negative inflow")
        for name in ("cf_solar", "cf_onshore", "cf_offshore"):
            a = getattr(self, name)
            if np.any(a < 0) or np.any(a > 1):
                raise ScenarioError(f"rep_day.{name}", "capacity factors must lie in [0, 1]")
        if self.months_represented < 1:
            raise ScenarioError("rep_day.months_represented", "must be >= 1")

    def cf(self, profile: str | None) -> np.ndarray:
        if profile is None:
            return np.ones(24)
        return getattr(self, CF_SERIES[profile])

    def to_dict(self) -> dict:
        out = {name: [float(x) for x in getattr(self, name)] for name in SERIES_NAMES}
        out["months_represented"] = self.months_represented
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> RepresentativeDay:
        return cls(**{name: np.asarray(d[name], dtype=float) for name in SERIES_NAMES},
                   months_represented=float(d["months_represented"]))


def _check_series(hourly_series: Mapping[str, np.ndarray], windows_per_year: int) -> tuple[dict, int]:
    if not 1 <= windows_per_year <= 12:
        raise ScenarioError("windows_per_year", "must be between 1 and 12")
    series = {}
    n = None
    for name in SERIES_NAMES:
        if name not in hourly_series:
            raise ScenarioError(f"timeseries.{name}", "missing series")
        arr = np.asarray(hourly_series[name], dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ScenarioError(f"timeseries.{name}", "non-finite values")
        if n is not None and len(arr) != n:
            raise ScenarioError(f"timeseries.{name}", "series lengths differ")
        n = len(arr)
        series[name] = arr
    if n < windows_per_year * 24:
        raise ScenarioError("timeseries", f"series too short ({n} h) for {windows_per_year} windows")
    return series, n // 24


def build_representative_days(hourly_series: Mapping[str, np.ndarray], windows_per_year: int) -> list[RepresentativeDay]:
    """One averaged day per contiguous window of the year."""
    series, n_days = _check_series(hourly_series, windows_per_year)
    windows = np.array_split(np.arange(n_days), windows_per_year)
    days = []
    for window in windows:
        profiles = {}
        for name, arr in series.items():
            block = arr[: n_days * 24].reshape(n_days, 24)[window]
            profiles[name] = block.mean(axis=0)
        days.append(RepresentativeDay(**profiles, months_represented=12.0 / windows_per_year))
    return days


def build_peak_day(hourly_series: Mapping[str, np.ndarray], windows_per_year: int) -> RepresentativeDay:
    """The calendar day holding the annual maximum hourly demand (earliest on ties)."""
    series, n_days = _check_series(hourly_series, windows_per_year)
    demand = series["demand"][: n_days * 24]
    day = int(np.argmax(demand)) // 24
    sl = slice(day * 24, day * 24 + 24)
    return RepresentativeDay(**{name: arr[sl].copy() for name, arr in series.items()},
                             months_represented=12.0 / windows_per_year)


@dataclass(frozen=True)
class ExistingAsset:
    tech: str
    capacity_mw: float
    retire_year: int


@dataclass(frozen=True)
class AgentSpec:
    id: str
    technologies: tuple[str, ...] = ()
    existing: tuple[ExistingAsset, ...] = ()


@dataclass(frozen=True)
class Ban:
    """Investment ban on a technology in one channel (or ``any``) over a year range."""

    tech: str
    channel: str = "any"
    from_year: int = -10**9
    to_year: int = 10**9
    agents: tuple[str, ...] = ()

    def applies(self, agent: str, tech: str, channel: str, year: int) -> bool:
        return (
            tech == self.tech
            and self.channel in ("any", channel)
            and self.from_year <= year <= self.to_year
            and (not self.agents or agent in self.agents)
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    technologies: tuple[Technology, ...]
    rep_days: tuple[RepresentativeDay, ...]
    peak_day: RepresentativeDay
    agents: tuple[AgentSpec, ...]
    start_year: int = 2020
    study_years: int = 20
    warmup_years: int = 2
    cooldown_years: int = 3
    steps_per_year: int = 6
    demand_growth: float = 0.02
    discount_rate: float = 0.08
    voll: float = 4000.0
    carbon_tax_schedule: Mapping[int, float] = field(default_factory=dict)
    res_target_curve: Mapping[int, float] = field(default_factory=dict)
    merchant_enabled: bool = True
    cm_enabled: bool = False
    cfd_enabled: bool = False
    cfd_price_cap: float = 200.0
    cm_price_cap: float = 40.0
    scarcity_strike: float = 500.0
    demand_margin: float = 0.0
    planning_horizon_years: int = 4
    pricing_rule: str = "marginal"
    slots: Mapping[str, int] = field(default_factory=lambda: {"merchant": 0, "cm": 2, "cfd": 4})
    bans: tuple[Ban, ...] = ()
    quantity_steps: int = 4
    price_steps: int = 12
    soc_steps: int = 7
    seed: int = 0

    def __post_init__(self):
        ids = [t.id for t in self.technologies]
        if len(set(ids)) != len(ids):
            raise ScenarioError("technologies", "duplicate technology ids")
        if ids != sorted(ids, key=TECH_ORDER.index):
            object.__setattr__(self, "technologies",
                               tuple(sorted(self.technologies, key=lambda t: TECH_ORDER.index(t.id))))
        for y, v in self.res_target_curve.items():
            if not 0 <= v <= 1:
                raise ScenarioError("res_target_curve", f"value {v} at {y} outside [0, 1]")
        if not self.discount_rate > 0:
            raise ScenarioError("discount_rate", "must be > 0")
        if not self.voll > 0:
            raise ScenarioError("voll", "must be > 0")
        if self.steps_per_year < 1:
            raise ScenarioError("steps_per_year", "must be >= 1")
        if len(self.rep_days) != self.steps_per_year:
            raise ScenarioError("rep_days", "need one representative day per step of the year")
        if self.study_years < 1 or self.warmup_years < 0 or self.cooldown_years < 0:
            raise ScenarioError("study_years", "calendar lengths must be non-negative (study >= 1)")
        if self.pricing_rule not in ("marginal", "pay_as_bid"):
            raise ScenarioError("pricing_rule", f"unknown rule {self.pricing_rule!r}")
        for ch in ("merchant", "cm", "cfd"):
            s = self.slots.get(ch)
            if s is None or not 0 <= s < self.steps_per_year:
                raise ScenarioError(f"slots.{ch}", "slot must index a step within the year")
        if min(self.quantity_steps, self.price_steps, self.soc_steps) < 2:
            raise ScenarioError("quantity_steps", "discretizations need at least 2 steps")
        if self.cfd_price_cap <= 0 or self.cm_price_cap <= 0:
            raise ScenarioError("cfd_price_cap", "price caps must be > 0")
        if not self.agents:
            raise ScenarioError("agents", "at least one agent required")
        agent_ids = [a.id for a in self.agents]
        if len(set(agent_ids)) != len(agent_ids):
            raise ScenarioError("agents", "duplicate agent ids")
        known = set(ids)
        enabled: set[str] = set()
        for a in self.agents:
            for t in a.technologies:
                if t not in known:
                    raise ScenarioError(f"agents.{a.id}.technologies", f"unknown technology {t!r}")
                if not self.tech(t).investable:
                    raise ScenarioError(f"agents.{a.id}.technologies", f"{t!r} is not investable")
                enabled.add(t)
            for e in a.existing:
                if e.tech not in known:
                    raise ScenarioError(f"agents.{a.id}.existing", f"unknown technology {e.tech!r}")
                if e.capacity_mw <= 0:
                    raise ScenarioError(f"agents.{a.id}.existing", "capacity must be > 0")
        if enabled:
            longest = max(self.tech(t).construction_years for t in enabled)
            if self.planning_horizon_years < longest:
                raise ScenarioError("planning_horizon_years",
                                    f"must be >= longest construction time of enabled technologies ({longest})")

    # calendar -------------------------------------------------------------
    @property
    def years(self) -> int:
        return self.warmup_years + self.study_years + self.cooldown_years

    @property
    def first_year(self) -> int:
        return self.start_year - self.warmup_years

    @property
    def last_study_year(self) -> int:
        return self.start_year + self.study_years - 1

    @property
    def episode_steps(self) -> int:
        return self.years * self.steps_per_year

    @property
    def days_per_step(self) -> float:
        return 365.0 / self.steps_per_year

    @property
    def normalization_factor(self) -> float:
        return self.voll**2 * self.years

    def year_of_step(self, t: int) -> int:
        return self.first_year + t // self.steps_per_year

    # lookups --------------------------------------------------------------
    @property
    def tech_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.technologies)

    def tech(self, tech_id: str) -> Technology:
        for t in self.technologies:
            if t.id == tech_id:
                return t
        raise KeyError(tech_id)

    def demand_factor(self, year: float) -> float:
        y = min(max(year, self.start_year), self.last_study_year)
        return (1.0 + self.demand_growth) ** (y - self.start_year)

    def carbon_tax(self, year: float) -> float:
        return interp_schedule(self.carbon_tax_schedule, year)

    def res_target(self, year: float) -> float:
        return interp_schedule(self.res_target_curve, year)

    @functools.cached_property
    def mean_cf(self) -> dict[str, float]:
        """Annual mean capacity factor per technology (1 for dispatchable)."""
        w = np.array([d.months_represented for d in self.rep_days])
        out = {}
        for t in self.technologies:
            out[t.id] = float(sum(wi * d.cf(t.cf_profile).mean() for wi, d in zip(w, self.rep_days)) / w.sum())
        return out

    @functools.cached_property
    def mean_demand(self) -> float:
        w = np.array([d.months_represented for d in self.rep_days])
        return float(sum(wi * d.demand.mean() for wi, d in zip(w, self.rep_days)) / w.sum())

    @functools.cached_property
    def mean_inflow(self) -> float:
        w = np.array([d.months_represented for d in self.rep_days])
        return float(sum(wi * d.hydro_inflow.mean() for wi, d in zip(w, self.rep_days)) / w.sum())

    @functools.cached_property
    def max_demand(self) -> float:
        base = max(float(self.peak_day.demand.max()), max(float(d.demand.max()) for d in self.rep_days))
        return base * self.demand_factor(self.last_study_year)

    def is_banned(self, agent: str, tech: str, channel: str, year: int) -> bool:
        return any(b.applies(agent, tech, channel, year) for b in self.bans)

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "technologies":
                v = [_tech_to_dict(t) for t in v]
            elif f.name == "rep_days":
                v = [d.to_dict() for d in v]
            elif f.name == "peak_day":
                v = v.to_dict()
            elif f.name == "agents":
                v = [{"id": a.id, "technologies": list(a.technologies),
                      "existing": [vars(e).copy() for e in a.existing]} for a in v]
            elif f.name == "bans":
                v = [{**vars(b), "agents": list(b.agents)} for b in v]
            elif isinstance(v, Mapping):
                v = {str(k): v[k] for k in v}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> Scenario:
        kw = dict(d)
        kw["technologies"] = tuple(_tech_from_dict(t) for t in d["technologies"])
        kw["rep_days"] = tuple(RepresentativeDay.from_dict(x) for x in d["rep_days"])
        kw["peak_day"] = RepresentativeDay.from_dict(d["peak_day"])
        kw["agents"] = tuple(
            AgentSpec(a["id"], tuple(a["technologies"]), tuple(ExistingAsset(**e) for e in a["existing"]))
            for a in d["agents"]
        )
        kw["bans"] = tuple(Ban(**{**b, "agents": tuple(b["agents"])}) for b in d.get("bans", ()))
        for key in ("carbon_tax_schedule", "res_target_curve"):
            kw[key] = {int(k): float(v) for k, v in d[key].items()}
        kw["slots"] = {str(k): int(v) for k, v in d["slots"].items()}
        return cls(**kw)

    def content_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def tech_set_hash(self) -> str:
        blob = json.dumps([_tech_to_dict(t) for t in self.technologies], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _tech_to_dict(t: Technology) -> dict:
    d = {f.name: getattr(t, f.name) for f in fields(t)}
    d["capex_by_year"] = {str(k): float(v) for k, v in t.capex_by_year.items()}
    if t.opex_fixed_abs_by_year is not None:
        d["opex_fixed_abs_by_year"] = {str(k): float(v) for k, v in t.opex_fixed_abs_by_year.items()}
    return d


def _tech_from_dict(d: Mapping) -> Technology:
    kw = dict(d)
    kw["capex_by_year"] = {int(k): float(v) for k, v in d["capex_by_year"].items()}
    if d.get("opex_fixed_abs_by_year") is not None:
        kw["opex_fixed_abs_by_year"] = {int(k): float(v) for k, v in d["opex_fixed_abs_by_year"].items()}
    return Technology(**kw)


def make_technology(tech_id: str, **overrides) -> Technology:
    """Reference catalog entry with optional field overrides."""
    if tech_id not in REFERENCE_TECHNOLOGIES:
        raise ScenarioError("technologies", f"unknown technology id {tech_id!r}")
    base = dict(REFERENCE_TECHNOLOGIES[tech_id])
    base.setdefault("max_invest_mw", 0.0 if tech_id == "ess_mid" else 4000.0)
    unknown = set(overrides) - {f.name for f in fields(Technology)}
    if unknown:
        raise ScenarioError(f"technologies.{tech_id}", f"unknown fields {sorted(unknown)}")
    base.update(overrides)
    for key in ("capex_by_year", "opex_fixed_abs_by_year"):
        if base.get(key) is not None:
            base[key] = {int(k): float(v) for k, v in base[key].items()}
    return Technology(id=tech_id, **base)


# --------------------------------------------------------------------------
# file loading


def read_series_csv(path: Path, column: str | None = None) -> np.ndarray:
    """Read one hourly series (header row, one value per line) and resample to 8760 h."""
    if not path.is_file():
        raise ScenarioError("timeseries", f"missing time-series file {path}")
    try:
        data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    except Exception as exc:  # numpy raises several types here
        raise ScenarioError("timeseries", f"cannot parse {path}: {exc}") from None
    names = data.dtype.names
    if column is None:
        column = names[-1]
    elif column not in names:
        raise ScenarioError("timeseries", f"{path} has no column {column!r}")
    values = np.atleast_1d(np.asarray(data[column], dtype=float))
    return resample_hourly(values, str(path))


def resample_hourly(values: np.ndarray, label: str = "series") -> np.ndarray:
    n = len(values)
    if n == HOURS_PER_YEAR:
        return values
    if n > HOURS_PER_YEAR and n % HOURS_PER_YEAR == 0:
        return values.reshape(HOURS_PER_YEAR, -1).mean(axis=1)
    if n < HOURS_PER_YEAR and HOURS_PER_YEAR % n == 0:
        return np.repeat(values, HOURS_PER_YEAR // n)
    raise ScenarioError("timeseries", f"{label}: {n} rows cannot be resampled to hourly")


def _require(doc: Mapping, key: str, kind=None, where: str | None = None):
    name = where or key
    if key not in doc:
        raise ScenarioError(name, "missing required field")
    v = doc[key]
    if kind is not None and not isinstance(v, kind):
        raise ScenarioError(name, f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return v


def _num_map(v, name: str) -> dict[int, float]:
    if isinstance(v, (int, float)):
        return {2000: float(v)}
    if not isinstance(v, Mapping):
        raise ScenarioError(name, "expected a year -> value map")
    try:
        return {int(k): float(x) for k, x in v.items()}
    except (TypeError, ValueError):
        raise ScenarioError(name, "keys must be years and values numbers") from None


def load_series(spec: Mapping, base: Path) -> dict[str, np.ndarray]:
    out = {}
    for name in SERIES_NAMES:
        entry = spec.get(name)
        where = f"timeseries.{name}"
        if entry is None:
            raise ScenarioError(where, "missing series entry")
        if isinstance(entry, (int, float)):
            entry = {"constant": entry}
        if not isinstance(entry, Mapping):
            raise ScenarioError(where, "expected {file: ...} or {constant: ...}")
        if "constant" in entry:
            arr = np.full(HOURS_PER_YEAR, float(entry["constant"]))
        elif "file" in entry:
            try:
                arr = read_series_csv(base / entry["file"], entry.get("column"))
            except ScenarioError as exc:
                raise ScenarioError(where, str(exc)) from None
        else:
            raise ScenarioError(where, "needs 'file' or 'constant'")
        out[name] = arr * float(entry.get("scale", 1.0))
    return out


_SCALAR_FIELDS = {
    "start_year": int, "study_years": int, "warmup_years": int, "cooldown_years": int,
    "steps_per_year": int, "demand_growth": float, "discount_rate": float, "voll": float,
    "merchant_enabled": bool, "cm_enabled": bool, "cfd_enabled": bool, "cfd_price_cap": float,
    "cm_price_cap": float, "scarcity_strike": float, "demand_margin": float,
    "planning_horizon_years": int, "pricing_rule": str, "quantity_steps": int, "price_steps": int,
    "soc_steps": int, "seed": int,
}


def scenario_from_document(doc: Mapping, base: Path = Path(".")) -> Scenario:
    if not isinstance(doc, Mapping):
        raise ScenarioError("document", "top level must be a mapping")
    version = _require(doc, "schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r} (expected {SCHEMA_VERSION})")
    units = doc.get("units", {})
    for key, expected in UNITS.items():
        if expected is not None and key in units and units[key] != expected:
            raise ScenarioError(f"units.{key}", f"only {expected!r} is supported")

    kw: dict[str, Any] = {"name": str(doc.get("name", "scenario"))}
    for key, kind in _SCALAR_FIELDS.items():
        if key in doc:
            v = doc[key]
            if kind is bool and not isinstance(v, bool):
                raise ScenarioError(key, "expected true/false")
            if kind in (int, float) and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ScenarioError(key, "expected a number")
            kw[key] = kind(v)
    for key in ("carbon_tax_schedule", "res_target_curve"):
        if key in doc:
            kw[key] = _num_map(doc[key], key)
    if "slots" in doc:
        kw["slots"] = {str(k): int(v) for k, v in doc["slots"].items()}

    techs_doc = _require(doc, "technologies", Mapping)
    techs = []
    for tid, overrides in techs_doc.items():
        overrides = dict(overrides or {})
        try:
            techs.append(make_technology(str(tid), **overrides))
        except TypeError as exc:
            raise ScenarioError(f"technologies.{tid}", str(exc)) from None

    agents_doc = _require(doc, "agents", list)
    agents = []
    for i, a in enumerate(agents_doc):
        where = f"agents[{i}]"
        if not isinstance(a, Mapping) or "id" not in a:
            raise ScenarioError(where, "each agent needs an id")
        existing = []
        for e in a.get("existing", []) or []:
            try:
                existing.append(ExistingAsset(str(e["tech"]), float(e["capacity_mw"]), int(e["retire_year"])))
            except (KeyError, TypeError, ValueError):
                raise ScenarioError(f"{where}.existing", "entries need tech, capacity_mw, retire_year") from None
        agents.append(AgentSpec(str(a["id"]), tuple(a.get("technologies", []) or []), tuple(existing)))

    bans = []
    for i, b in enumerate(doc.get("bans", []) or []):
        try:
            bans.append(Ban(str(b["tech"]), str(b.get("channel", "any")), int(b.get("from_year", -10**9)),
                            int(b.get("to_year", 10**9)), tuple(b.get("agents", ()))))
        except (KeyError, TypeError, ValueError):
            raise ScenarioError(f"bans[{i}]", "entries need tech (channel, from_year, to_year optional)") from None

    series = load_series(_require(doc, "timeseries", Mapping), base)
    spy = kw.get("steps_per_year", 6)
    rep = build_representative_days(series, spy)
    peak = build_peak_day(series, spy)
    return Scenario(technologies=tuple(techs), rep_days=tuple(rep), peak_day=peak, agents=tuple(agents),
                    bans=tuple(bans), **kw)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError("path", f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError("document", f"parse failure in {path}: {exc}") from None
    return scenario_from_document(doc, path.parent)


def with_overrides(scenario: Scenario, **changes) -> Scenario:
    """Copy of ``scenario`` with fields replaced (re-validated)."""
    return replace(scenario, **changes)


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def synthetic_series(seed: int = 0, peak_mw: float = 1000.0) -> dict[str, np.ndarray]:
    """Smooth synthetic year of demand, solar/wind capacity factors and inflow."""
    rng = np.random.default_rng(seed)
    hours = np.arange(HOURS_PER_YEAR)
    hod = hours % 24
    doy = hours // 24
    season = np.cos(2 * math.pi * (doy - 15) / 365.0)
    daily = 0.75 + 0.2 * np.sin(math.pi * (hod - 6) / 14.0).clip(min=0) + 0.05 * np.sin(2 * math.pi * (hod - 18) / 24)
    demand = peak_mw * (0.82 + 0.1 * np.abs(season)) * daily
    demand *= 1 + 0.03 * rng.standard_normal(len(hours))
    sun = np.sin(math.pi * (hod - 6) / 12.0).clip(min=0) ** 1.5
    solar = (sun * (0.75 - 0.2 * season) * (0.85 + 0.15 * rng.random(len(hours)))).clip(0, 1)
    wind_base = 0.3 + 0.1 * season
    noise = np.convolve(rng.standard_normal(len(hours) + 47), np.ones(48) / 48.0, mode="valid")[: len(hours)]
    onshore = (wind_base + 0.8 * noise).clip(0.02, 1)
    offshore = (wind_base + 0.15 + 0.8 * noise).clip(0.05, 1)
    inflow = peak_mw * 0.05 * (1 + 0.5 * np.cos(2 * math.pi * (doy - 120) / 365.0))
    return {"demand": demand, "cf_solar": solar, "cf_onshore": onshore, "cf_offshore": offshore,
            "hydro_inflow": inflow}
