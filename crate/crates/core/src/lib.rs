//! Forecast combination for quantile time-series forecasts.
//!
//! The crate covers the full pipeline: local base learners, windowed
//! out-of-fold backtests, a zoo of combiners (averages, model selection,
//! performance weights, greedy ensemble selection, tied linear stackers and a
//! tabular neural stacker), multi-layer stack ensembles trained with two-level
//! cross-validation, and cross-dataset leaderboard aggregation.

pub mod baselearners;
pub mod cv;
pub mod error;
pub mod evalreport;
pub mod io;
pub mod losses;
pub mod multilayer;
pub mod optim;
pub mod series;
pub mod stackers;
pub mod synthetic;
pub mod timing;

pub use error::{Error, Result};
pub use series::{
    enforce_quantile_monotonicity, filter_min_length, validate_panel, EvalLoss, ForecastTask, ModelForecastSet,
    QuantileForecast, TimeSeries, TimeSeriesPanel,
};
