"""Quarter-hourly electricity price forecasting and trading backtests.

The package covers the full pipeline: calendar-gridded market data with DST
normalization (:mod:`~qhspot.market_data`), robust variance-stabilizing
transforms (:mod:`~qhspot.transform`), per-quarter-hour design matrices
(:mod:`~qhspot.features`), OLS and elastic-net estimators
(:mod:`~qhspot.estimators`), rolling out-of-sample evaluation
(:mod:`~qhspot.backtest`), forecast-comparison statistics
(:mod:`~qhspot.evaluation`), and trading-strategy simulation with economic
accounting (:mod:`~qhspot.portfolio`). The :mod:`~qhspot.cli` module chains
the stages from JSON configs.
"""

from .errors import (ConfigError, DataError, IntegrityError, NumericalError,
                     ParseError, QhSpotError, SchemaError)
from .market_data import (Dataset, Market, QhSeries, SeriesId, Unit,
                          assemble, broadcast_hourly, impute_gaps, ingest_csv)
from .transform import (TransformSpec, fit_spec, mlog, mlog_inverse,
                        apply_pipeline, invert_pipeline)
from .features import (DesignMatrix, FeatureKind, FeatureSetKind, PcaFactors,
                       build_design, decision_time_guard, pca_fit,
                       similar_load_day)
from .estimators import (FittedModel, LambdaGrid, cross_validate, fit_en,
                         fit_en_path, fit_naive, fit_ols, lambda_max, predict)
from .backtest import (Checkpoint, ForecastPanel, RollingPlan, export_panel,
                       load_panel, run)
from .evaluation import (TestResult, dacc, dm_test, mae, mean_ttest, pt_test,
                         rmse, sharpe, sharpe_equality_pairwise)
from .portfolio import (MeanVarInputs, Side, StrategyLedger, account,
                        base_strategy, meanvar_strategy, meanvar_weight,
                        naive_strategy, perfect_strategy, rolling_moments)

__version__ = "0.1.0"
