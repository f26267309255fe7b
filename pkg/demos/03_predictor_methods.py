"""Methods that use all predictors on a scenario with a hidden radiation effect.

The ensemble does not see a radiation-driven component of the observed gusts.
Gradient-boosted EMOS, quantile regression forests and the three network
heads can pick it up from the predictors; importance measures show which
predictor carries the signal.
"""

import numpy as np

from gustpp import ScenarioConfig, generate_scenario, split_chronological
from gustpp.gbm import gbm_coefficient_importance
from gustpp.pipeline import evaluate_forecast, fit_method
from gustpp.verification import permutation_importance

sc = generate_scenario(ScenarioConfig.preset("nonlinear", n_stations=6, lead_times=(12, 15), rng_seed=2))
split = split_chronological(sc.cases, ([2010], 2011, 2012))
test = split.test.subset(split.test.has_obs)

hyper = {
    "qrf": {"n_trees": 100},
    "drn": {"n_members": 2, "epochs": 40},
    "bqn": {"n_members": 2, "epochs": 40},
    "hen": {"n_members": 2, "epochs": 40},
}
models = {}
for i, m in enumerate(("raw", "emos", "emos-gb", "qrf", "drn", "bqn", "hen")):
    models[m] = fit_method(m, split, seed=i, **hyper.get(m, {}))
    s = evaluate_forecast(models[m].predict(test), test.obs)
    print(f"{m:<8} CRPS {s['crps'].mean():.3f}  coverage {100 * s['coverage'].mean():.1f}%")

print("\nEMOS-GB location coefficients:", {k: round(float(v), 3) for k, v in gbm_coefficient_importance(models["emos-gb"])["location"].items()})
oob = models["qrf"].importance(split.train_full)
print("QRF out-of-bag importance:", {k: round(v, 3) for k, v in sorted(oob.items(), key=lambda kv: -kv[1])[:4]})

rng = np.random.default_rng(0)
print("\nDRN permutation importance (relative CRPS increase):")
for f in test.predictor_names:
    r = permutation_importance(models["drn"].predict, test, f, rng=rng, n_repeats=3)
    print(f"  {f:<10} {r.delta0:+.4f}")
