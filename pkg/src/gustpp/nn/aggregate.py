"""Combination of the forecasts of a network ensemble."""

from ..distributions import BernsteinQuantile, HistogramForecast, TruncatedLogistic, params_average, vincentize
from ..exceptions import DomainError

__all__ = ["aggregate"]


def aggregate(head, forecasts):
    """Combine member forecasts of one head.

    ``drn`` averages the location and scale parameters, ``bqn`` averages the
    Bernstein coefficients and ``hen`` averages the quantile functions on the
    union of all knot levels.
    """
    forecasts = list(forecasts)
    if not forecasts:
        raise DomainError("no member forecasts to combine")
    if head == "drn" and all(isinstance(f, TruncatedLogistic) for f in forecasts):
        return params_average(forecasts)
    if head == "bqn" and all(isinstance(f, BernsteinQuantile) for f in forecasts):
        return vincentize(forecasts)
    if head == "hen" and all(isinstance(f, HistogramForecast) for f in forecasts):
        return vincentize(forecasts)
    raise DomainError(f"member forecasts do not match head {head!r}")
