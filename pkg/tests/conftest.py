import datetime as dt

import numpy as np
import pytest

from qhspot.backtest import ForecastPanel
from qhspot.market_data import QH_PER_DAY, Market


def make_panel(days, models, predictions, realized,
               targets=(Market.EPEX_QH_AUCTION,)):
    """Small hand-built forecast panel.

    ``predictions[(model, target)]`` and ``realized[target]`` are
    (n_days, 96) arrays (NaN = skipped slot).
    """
    targets = tuple(Market(t) for t in targets)
    return ForecastPanel(
        days=tuple(days),
        targets=targets,
        models=tuple(models),
        predictions={(m, Market(t)): np.asarray(p, dtype=np.float64)
                     for (m, t), p in predictions.items()},
        predictions_t={(m, Market(t)): np.asarray(p, dtype=np.float64)
                       for (m, t), p in predictions.items()},
        realized={Market(t): np.asarray(r, dtype=np.float64)
                  for t, r in realized.items()},
    )


def day_range(start: dt.date, n: int):
    return [start + dt.timedelta(days=i) for i in range(n)]


def grid(n_days, fill=0.0):
    return np.full((n_days, QH_PER_DAY), float(fill))


@pytest.fixture(scope="session")
def small_dataset():
    """260-day synthetic dataset shared by slower tests."""
    from qhspot.synthetic import make_dataset
    dataset, dgp = make_dataset(n_days=260, seed=11)
    return dataset, dgp
