"""Proper scores for the forecast types used by the postprocessing methods.

A truncated logistic forecast, a raw ensemble, a histogram and a Bernstein
quantile function are scored against the same observation, and the closed
forms are compared with direct numerical integration.
"""

import numpy as np

from gustpp.distributions import BernsteinQuantile, EnsembleForecast, HistogramForecast, TruncatedLogistic
from gustpp.scoring import crps, crps_numeric_oracle, logscore, pi_metrics

y = np.array([11.3])
rng = np.random.default_rng(0)

forecasts = {
    "truncated logistic": TruncatedLogistic(np.array([10.0]), np.array([1.8])),
    "20-member ensemble": EnsembleForecast(np.sort(rng.normal(9.5, 1.5, (1, 20)))),
    "histogram": HistogramForecast(np.array([0.0, 5.0, 8.0, 10.0, 12.0, 15.0, 22.0]), np.array([[0.05, 0.15, 0.3, 0.3, 0.15, 0.05]])),
    "Bernstein quantile": BernsteinQuantile(np.cumsum(np.r_[4.0, np.full(12, 1.0)])[None, :]),
}

# the Bernstein forecast is scored on the 125-level quantile grid, hence the
# small gap to the integral
print(f"observation {y[0]} m/s\n")
print(f"{'forecast':<20} {'CRPS':>8} {'quadrature':>11} {'PI length':>10} {'covered':>8}")
for name, f in forecasts.items():
    length, covered = pi_metrics(f, y)
    ref = crps_numeric_oracle(f, y[0])
    print(f"{name:<20} {crps(f, y)[0]:8.4f} {ref:11.4f} {length[0]:10.2f} {int(covered[0]):8d}")

print("\nlog score of the histogram:", logscore(forecasts["histogram"], y)[0])
print("log score of the truncated logistic:", logscore(forecasts["truncated logistic"], y)[0])
