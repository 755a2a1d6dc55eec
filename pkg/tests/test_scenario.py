import math

import numpy as np
import pytest
import yaml
from hypothesis import given, strategies as st

from builders import BASE, TOY, flat_series, small_scenario
from ltmarket.scenario import (
    REFERENCE_TECHNOLOGIES, Scenario, ScenarioError, availability_probabilities, build_peak_day,
    build_representative_days, cost_at_year, load_scenario, make_technology, sample_availability,
    scenario_from_document, synthetic_series,
)


def write_doc(tmp_path, doc, series_rows=None):
    data = tmp_path / "series.csv"
    rows = series_rows if series_rows is not None else np.full(8760, 100.0)
    np.savetxt(data, rows, header="value", comments="", fmt="%.4f")
    doc.setdefault("timeseries", {
        "demand": {"file": "series.csv"}, "cf_solar": {"constant": 0.3}, "cf_onshore": {"constant": 0.3},
        "cf_offshore": {"constant": 0.4}, "hydro_inflow": {"constant": 0.0},
    })
    path = tmp_path / "scn.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def minimal_doc():
    return {
        "schema_version": 1,
        "technologies": {"ccgt": {}},
        "agents": [{"id": "a", "technologies": ["ccgt"]}, {"id": "b", "technologies": ["ccgt"]}],
    }


def test_minimal_two_agent_one_tech(tmp_path):
    scn = load_scenario(write_doc(tmp_path, minimal_doc()))
    assert [a.id for a in scn.agents] == ["a", "b"]
    assert scn.tech_ids == ("ccgt",)


def test_res_target_out_of_range_names_field(tmp_path):
    doc = minimal_doc()
    doc["res_target_curve"] = {2030: 1.2}
    with pytest.raises(ScenarioError) as err:
        load_scenario(write_doc(tmp_path, doc))
    assert err.value.field == "res_target_curve"


def test_base_config_echoes_reference_values():
    scn = load_scenario(BASE)
    assert scn.voll == 4000 and scn.cm_price_cap == 40 and scn.cfd_price_cap == 200
    assert scn.discount_rate == 0.08
    assert scn.episode_steps == 150


def test_missing_series_file_is_reported(tmp_path):
    doc = minimal_doc()
    doc["timeseries"] = {"demand": {"file": "nope.csv"}, "cf_solar": 0, "cf_onshore": 0, "cf_offshore": 0,
                         "hydro_inflow": 0}
    with pytest.raises(ScenarioError, match="nope.csv"):
        load_scenario(write_doc(tmp_path, doc))


def test_missing_scenario_file():
    with pytest.raises(ScenarioError, match="not found"):
        load_scenario("/nonexistent/scn.yaml")


def test_wrong_schema_version(tmp_path):
    doc = minimal_doc()
    doc["schema_version"] = 7
    with pytest.raises(ScenarioError) as err:
        load_scenario(write_doc(tmp_path, doc))
    assert err.value.field == "schema_version"


def test_unsupported_unit_rejected(tmp_path):
    doc = minimal_doc()
    doc["units"] = {"capex": "currency_per_mw"}
    with pytest.raises(ScenarioError) as err:
        load_scenario(write_doc(tmp_path, doc))
    assert err.value.field == "units.capex"


def test_planning_horizon_must_cover_construction(tmp_path):
    doc = minimal_doc()
    doc["planning_horizon_years"] = 1
    with pytest.raises(ScenarioError) as err:
        load_scenario(write_doc(tmp_path, doc))
    assert err.value.field == "planning_horizon_years"


def test_subhourly_series_resampled(tmp_path):
    rows = np.tile([90.0, 110.0], 8760)  # half-hourly
    scn = load_scenario(write_doc(tmp_path, minimal_doc(), rows))
    assert np.allclose(scn.rep_days[0].demand, 100.0)


def test_scenario_dict_round_trip():
    scn = load_scenario(TOY)
    again = Scenario.from_dict(scn.to_dict())
    assert again.content_hash() == scn.content_hash()


# representative days ------------------------------------------------------


def test_constant_demand_fixed_point():
    days = build_representative_days(flat_series(100.0), 6)
    assert len(days) == 6
    for d in days:
        assert np.all(d.demand == 100.0)
        assert d.months_represented == 2


def test_alternating_days_average():
    s = flat_series()
    s["demand"] = np.repeat(np.where(np.arange(365) % 2 == 0, 50.0, 150.0), 24)
    s = {k: v[: 2 * 24] for k, v in s.items()}
    (day,) = build_representative_days(s, 1)
    assert np.all(day.demand == 100.0)


@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_window_means_preserved(windows, seed):
    rng = np.random.default_rng(seed)
    s = flat_series()
    s["demand"] = rng.uniform(0, 1000, 8760)
    s["cf_solar"] = rng.uniform(0, 1, 8760)
    days = build_representative_days(s, windows)
    blocks = np.array_split(np.arange(365), windows)
    for d, block in zip(days, blocks):
        raw = s["demand"].reshape(365, 24)[block].mean()
        assert math.isclose(d.demand.mean(), raw, rel_tol=1e-9)
        assert math.isclose(d.cf_solar.mean(), s["cf_solar"].reshape(365, 24)[block].mean(), rel_tol=1e-9)


def test_series_too_short():
    s = {k: v[:24] for k, v in flat_series().items()}
    with pytest.raises(ScenarioError):
        build_representative_days(s, 6)


def test_non_finite_series_rejected():
    s = flat_series()
    s["demand"][5] = np.nan
    with pytest.raises(ScenarioError):
        build_representative_days(s, 6)


def test_peak_day_extraction():
    s = synthetic_series(3, 1000.0)
    s["demand"][200 * 24 + 19] = 5000.0
    peak = build_peak_day(s, 6)
    assert np.array_equal(peak.demand, s["demand"][200 * 24: 201 * 24])
    assert np.array_equal(peak.cf_solar, s["cf_solar"][200 * 24: 201 * 24])
    assert peak.demand.max() == s["demand"].max()


def test_peak_day_tie_takes_earliest():
    s = flat_series(100.0)
    s["demand"][10 * 24 + 3] = 500.0
    s["demand"][40 * 24 + 3] = 500.0
    s["cf_solar"][10 * 24: 11 * 24] = 0.9
    peak = build_peak_day(s, 6)
    assert np.all(peak.cf_solar == 0.9)


# availability -------------------------------------------------------------


def test_degenerate_availability():
    tech = make_technology("ccgt", availability_mean=1.0, availability_std=0.0)
    rng = np.random.default_rng(0)
    assert np.all(sample_availability(rng, tech, size=1000) == 1.0)


def test_reference_availability_probabilities():
    # hand solution: p100 + p50/2 = 0.925, p100 + p50/4 = 0.23**2 + 0.925**2 = 0.908525
    p50 = 4 * (0.925 - 0.908525)
    p100 = 0.925 - p50 / 2
    expected = (1 - p50 - p100, p50, p100)
    got = availability_probabilities(0.925, 0.23)
    assert np.allclose(got, expected, atol=1e-12)
    assert np.allclose(got, (0.042, 0.066, 0.892), atol=5e-4)


def test_infeasible_moments():
    with pytest.raises(ScenarioError):
        availability_probabilities(0.5, 0.6)
    with pytest.raises(ScenarioError):
        make_technology("ccgt", availability_mean=0.5, availability_std=0.6)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_moments_reproduced_exactly(w50, w100):
    # build a distribution on {0, .5, 1}, then recover it from its moments
    p50 = w50 * (1 - w100)
    p100 = w100
    levels = np.array([0.0, 0.5, 1.0])
    probs = np.array([1 - p50 - p100, p50, p100])
    mean = float(probs @ levels)
    if mean <= 0:
        return
    std = math.sqrt(max(float(probs @ levels**2) - mean * mean, 0.0))
    got = np.array(availability_probabilities(mean, std))
    assert math.isclose(float(got @ levels), mean, abs_tol=1e-9)
    assert math.isclose(math.sqrt(max(float(got @ levels**2) - mean**2, 0)), std, abs_tol=1e-6)
    assert np.allclose(got, probs, atol=1e-6)


# costs ----------------------------------------------------------------------


def test_capex_interpolation_and_clamp():
    solar = make_technology("solar")
    assert cost_at_year(solar, 2030).capex == pytest.approx(442.5)
    assert cost_at_year(solar, 2020).capex == 562
    assert cost_at_year(solar, 2050).capex == 323
    assert cost_at_year(solar, 2000).capex == 562


@given(st.floats(2020, 2040), st.floats(2020, 2040))
def test_capex_monotone_between_anchors(y1, y2):
    solar = make_technology("solar")
    lo, hi = sorted((y1, y2))
    assert cost_at_year(solar, hi).capex <= cost_at_year(solar, lo).capex


def test_emission_factor_zero_for_res():
    with pytest.raises(ScenarioError):
        make_technology("solar", emission_factor=0.1)


def test_capex_must_be_positive():
    with pytest.raises(ScenarioError):
        make_technology("ccgt", capex_by_year={2020: 0})


def test_reference_catalog_complete():
    assert set(REFERENCE_TECHNOLOGIES) == {"solar", "onshore_wind", "offshore_wind", "coal", "ocgt", "ccgt",
                                           "ess_short", "ess_mid"}


def test_episode_length_with_padding():
    scn = small_scenario(study_years=20, warmup_years=2, cooldown_years=3)
    assert scn.episode_steps == 150


def test_demand_growth_held_outside_study_period():
    scn = small_scenario(study_years=3, warmup_years=1, cooldown_years=1, demand_growth=0.1)
    assert scn.demand_factor(2019) == 1.0
    assert scn.demand_factor(2022) == pytest.approx(1.21)
    assert scn.demand_factor(2023) == pytest.approx(1.21)


def test_document_without_technologies(tmp_path):
    doc = minimal_doc()
    del doc["technologies"]
    with pytest.raises(ScenarioError) as err:
        scenario_from_document(doc, tmp_path)
    assert err.value.field == "technologies"
