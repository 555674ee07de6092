"""Figure rendering for the covariance experiment CSV tables."""

from .figures import BiasVarianceRender, plot_bias_variance, plot_rates
from .frames import (
    BlockFrame,
    BlockRow,
    NoDataError,
    RatesFrame,
    SchemaError,
    ols_decay,
)

__version__ = "0.1.0"

__all__ = [
    "BiasVarianceRender",
    "BlockFrame",
    "BlockRow",
    "NoDataError",
    "RatesFrame",
    "SchemaError",
    "ols_decay",
    "plot_bias_variance",
    "plot_rates",
]
