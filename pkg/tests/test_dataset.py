import numpy as np
import pytest

from gustpp.dataset import (
    N_MEMBERS,
    PREDICTOR_NAMES,
    CaseSet,
    ScenarioConfig,
    fit_standardizer,
    generate_scenario,
    load_csv,
    load_truth_csv,
    seasonal_months,
    split_chronological,
    write_csv,
    write_truth_csv,
)
from gustpp.exceptions import ConfigError, DataError


def test_scenario_layout(small_scenario):
    c = small_scenario.cases
    assert len(c) == 3 * 365 * 4 * 2 + 4 * 2  # 2012 is a leap year
    assert c.ens.shape == (len(c), N_MEMBERS)
    assert c.predictor_names == PREDICTOR_NAMES
    assert np.all(c.obs > 0) and np.all(c.ens > 0)
    assert set(c.leads().tolist()) == {6, 15}


def test_scenario_is_reproducible():
    cfg = ScenarioConfig.preset("linear", n_stations=2, n_years=1, lead_times=(0,), rng_seed=3)
    a, b = generate_scenario(cfg), generate_scenario(cfg)
    np.testing.assert_array_equal(a.cases.ens, b.cases.ens)
    np.testing.assert_array_equal(a.cases.obs, b.cases.obs)


def test_observations_follow_truth():
    # unrounded calibrated preset: PIT of the observations under the truth is uniform
    from scipy import stats
    from gustpp.distributions import tlogis_cdf

    sc = generate_scenario(ScenarioConfig.preset("calibrated", n_stations=5, n_years=2, lead_times=(12,), rng_seed=1))
    u = tlogis_cdf(sc.cases.obs, sc.mu_true, sc.sigma_true)
    assert stats.kstest(u, "uniform").pvalue > 0.01


def test_csv_roundtrip_is_byte_identical(tmp_path, small_scenario):
    cases = small_scenario.cases[:50]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(cases, p1)
    back = load_csv(p1)
    write_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(back.ens, cases.ens)


def test_truth_roundtrip(tmp_path, small_scenario):
    c = small_scenario.cases[:10]
    write_truth_csv(c, small_scenario.mu_true[:10], small_scenario.sigma_true[:10], tmp_path / "t.csv")
    st, d, ld, mu, sg = load_truth_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(mu, small_scenario.mu_true[:10])


def test_missing_observation_kept(tmp_path, small_scenario):
    c = small_scenario.cases[:3]
    obs = c.obs.copy()
    obs[1] = np.nan
    c = CaseSet(c.station, c.date, c.lead, obs, c.ens, c.X, c.predictor_names)
    write_csv(c, tmp_path / "m.csv")
    back = load_csv(tmp_path / "m.csv")
    assert back[1].observation is None
    assert back.has_obs.tolist() == [True, False, True]


@pytest.mark.parametrize(
    "mutate, column",
    [
        (lambda r: r.__setitem__(4, "-1.0"), "ens_1"),
        (lambda r: r.__setitem__(2, "30"), "lead_time"),
        (lambda r: r.__setitem__(3, "abc"), "obs"),
    ],
)
def test_malformed_rows_report_location(tmp_path, small_scenario, mutate, column):
    write_csv(small_scenario.cases[:3], tmp_path / "x.csv")
    lines = (tmp_path / "x.csv").read_text().splitlines()
    row = lines[2].split(",")
    mutate(row)
    lines[2] = ",".join(row)
    (tmp_path / "x.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError) as exc:
        load_csv(tmp_path / "x.csv")
    assert exc.value.line == 3
    assert exc.value.column == column


def test_missing_file():
    with pytest.raises(DataError):
        load_csv("/nonexistent/cases.csv")


def test_chronological_split(small_scenario):
    s = split_chronological(small_scenario.cases, ([2010], [2011], [2012]))
    assert set(s.train.year) == {2010} and set(s.test.year) == {2012}
    assert len(s.train_full) == len(s.train) + len(s.validation)
    with pytest.raises(ConfigError):
        split_chronological(small_scenario.cases, ([2011], [2010], [2012]))
    with pytest.raises(ConfigError):
        split_chronological(small_scenario.cases, ([2010], [2010], [2012]))
    with pytest.raises(ConfigError):
        split_chronological(small_scenario.cases, ([2010], [2011], [2020]))


def test_standardizer_drops_constant_columns(rng):
    X = np.column_stack([rng.normal(3, 2, 100), np.full(100, 7.0)])
    with pytest.warns(UserWarning):
        s = fit_standardizer(X, ("a", "b"))
    assert s.dropped == ("b",)
    Z = s.transform(X, ("a", "b"))
    assert Z.shape == (100, 1)
    assert Z.mean() == pytest.approx(0.0, abs=1e-12)
    assert Z.std(ddof=1) == pytest.approx(1.0)


def test_seasonal_months_wrap():
    assert seasonal_months(1) == {12, 1, 2}
    assert seasonal_months(6) == {5, 6, 7}
    assert seasonal_months(12) == {11, 12, 1}
    with pytest.raises(ConfigError):
        seasonal_months(13)


@pytest.mark.parametrize("kw", [dict(dispersion=0.0), dict(truth="cubic"), dict(sub_biases=(1, 2)), dict(lead_times=(30,))])
def test_scenario_validation(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_preset_and_dict_roundtrip():
    cfg = ScenarioConfig.preset("planted", n_stations=3)
    assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ScenarioConfig.preset("nope")
