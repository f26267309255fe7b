"""Comparing two forecasts station by station.

Diebold-Mariano tests at each station check whether EMOS beats the raw
ensemble; the Benjamini-Hochberg procedure controls the false discovery rate
over the stations. Rank and PIT histograms summarize calibration.
"""

import numpy as np

from gustpp import ScenarioConfig, generate_scenario, split_chronological
from gustpp.pipeline import fit_method
from gustpp.scoring import crps
from gustpp.verification import benjamini_hochberg, calibration_diagnostics, dm_test

sc = generate_scenario(ScenarioConfig.preset("underdispersed", n_stations=8, lead_times=(12,), rng_seed=7))
split = split_chronological(sc.cases, ([2010], 2011, 2012))
test = split.test.subset(split.test.has_obs)
raw = fit_method("raw", split).predict(test)
emos = fit_method("emos", split).predict(test)
s_raw, s_emos = crps(raw, test.obs), crps(emos, test.obs)

p, t = [], []
for st in np.unique(test.station):
    r = dm_test(s_emos[test.station == st], s_raw[test.station == st])
    t.append(r.statistic)
    p.append(r.p_first_better)
reject, p_star = benjamini_hochberg(p, 0.05)
for st, ti, pi, rj in zip(np.unique(test.station), t, p, reject):
    print(f"station {st}: t = {ti:6.2f}, one-sided p = {pi:.1e}, EMOS better: {bool(rj)}")
print("BH threshold:", p_star)

rng = np.random.default_rng(1)
print("\nrank histogram of the raw ensemble:", calibration_diagnostics(raw, test.obs, rng).counts)
print("PIT histogram of EMOS (21 bins):   ", calibration_diagnostics(emos, test.obs, rng).counts)
