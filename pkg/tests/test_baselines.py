import numpy as np
import pytest

from gustpp.baselines import EpcModel, RawEnsemble, fit_epc, predict_epc
from gustpp.dataset import ScenarioConfig, generate_scenario, split_chronological
from gustpp.distributions import DiscreteForecast, EnsembleForecast
from gustpp.exceptions import DataError, ModelKeyError
from gustpp.verification import calibration_diagnostics


def test_pool_uses_cyclic_three_month_window(small_split):
    hist = small_split.train_full
    m = fit_epc(hist)
    dec = predict_epc(m, 1, np.datetime64("2012-12-15"), 6)
    sel = (hist.station == 1) & (hist.lead == 6) & np.isin(hist.month, [11, 12, 1])
    np.testing.assert_array_equal(np.sort(dec.members), np.sort(hist.obs[sel]))


def test_batch_prediction_matches_single(small_split):
    m = fit_epc(small_split.train_full)
    test = small_split.test[:20]
    batch = m.predict(test)
    assert isinstance(batch, DiscreteForecast)
    for i in (0, 7, 19):
        single = predict_epc(m, int(test.station[i]), test.date[i], int(test.lead[i]))
        assert batch[i].cdf(np.array(5.0)) == pytest.approx(float(single.cdf(np.array(5.0))))


def test_serialization(small_split):
    m = fit_epc(small_split.train)
    back = EpcModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.pool(2, 6, 3), m.pool(2, 6, 3))


def test_missing_pool_and_empty_history(small_split):
    m = fit_epc(small_split.train)
    with pytest.raises(ModelKeyError):
        predict_epc(m, 99, np.datetime64("2012-01-01"), 6)
    no_obs = small_split.train[:0]
    with pytest.raises(DataError):
        fit_epc(no_obs)


def test_raw_ensemble_passthrough(small_split):
    f = RawEnsemble().predict(small_split.test[:5])
    assert isinstance(f, EnsembleForecast)
    np.testing.assert_array_equal(f.members, small_split.test[:5].ens)


def test_stationary_climate_gives_calibrated_epc():
    # no seasonal cycle and no day-to-day weather: observations are iid per
    # station, so the climatological pool is a sample of the true distribution
    cfg = ScenarioConfig.preset(
        "calibrated", n_stations=6, n_years=4, lead_times=(12,), seasonal_amplitude=0.0, latent_sd=0.0, rng_seed=2
    )
    sc = generate_scenario(cfg)
    s = split_chronological(sc.cases, ([2010, 2011], [2012], [2013]))
    f = fit_epc(s.train_full).predict(s.test)
    diag = calibration_diagnostics(f, s.test.obs, rng=np.random.default_rng(0), n_bins=20)
    assert diag.p_value > 0.05
