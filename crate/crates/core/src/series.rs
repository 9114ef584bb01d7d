//! Domain types shared across the crate: series, panels, forecast tasks and
//! quantile forecasts, plus panel validation and forecast hygiene.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Minimum series length, in multiples of the horizon, kept by
/// [`filter_min_length`].
pub const MIN_LENGTH_HORIZONS: usize = 8;

/// A regularly sampled univariate series.
///
/// Timestamps are implicit: point `t` (0-based) sits at
/// `start_time + t * step`. Units of `start_time` and `step` are chosen by
/// the ingestion layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub item_id: String,
    pub start_time: i64,
    pub step: i64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(item_id: impl Into<String>, start_time: i64, step: i64, values: Vec<f64>) -> Self {
        Self {
            item_id: item_id.into(),
            start_time,
            step,
            values,
        }
    }

    /// Series with unit step starting at zero.
    pub fn from_values(item_id: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(item_id, 0, 1, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The first `len` observations as a new series.
    pub fn prefix(&self, len: usize) -> TimeSeries {
        TimeSeries {
            item_id: self.item_id.clone(),
            start_time: self.start_time,
            step: self.step,
            values: self.values[..len.min(self.values.len())].to_vec(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::EmptySeries(self.item_id.clone()));
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                item: self.item_id.clone(),
                index,
            });
        }
        Ok(())
    }
}

/// A dataset: a collection of series sharing one seasonality.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    pub series: Vec<TimeSeries>,
    pub seasonality: usize,
    pub freq_label: String,
}

impl TimeSeriesPanel {
    pub fn new(series: Vec<TimeSeries>, seasonality: usize, freq_label: impl Into<String>) -> Self {
        Self {
            series,
            seasonality,
            freq_label: freq_label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn item_ids(&self) -> Vec<String> {
        self.series.iter().map(|s| s.item_id.clone()).collect()
    }

    pub fn get(&self, item_id: &str) -> Option<&TimeSeries> {
        self.series.iter().find(|s| s.item_id == item_id)
    }
}

/// Checks every series invariant and returns the panel unchanged.
pub fn validate_panel(panel: TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    if panel.seasonality == 0 {
        return Err(Error::InvalidConfig("seasonality must be >= 1".into()));
    }
    let mut seen = HashSet::with_capacity(panel.series.len());
    for s in &panel.series {
        if !seen.insert(s.item_id.as_str()) {
            return Err(Error::DuplicateItemId(s.item_id.clone()));
        }
        s.check()?;
    }
    Ok(panel)
}

/// Keeps the series with at least `8 * horizon` observations, in order.
pub fn filter_min_length(panel: TimeSeriesPanel, horizon: usize) -> Result<TimeSeriesPanel> {
    if horizon == 0 {
        return Err(Error::InvalidTask("horizon must be >= 1".into()));
    }
    let min_length = MIN_LENGTH_HORIZONS * horizon;
    let TimeSeriesPanel {
        series,
        seasonality,
        freq_label,
    } = panel;
    let kept: Vec<TimeSeries> = series.into_iter().filter(|s| s.len() >= min_length).collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter { min_length });
    }
    Ok(TimeSeriesPanel {
        series: kept,
        seasonality,
        freq_label,
    })
}

/// Loss used both to train combiners and to evaluate forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalLoss {
    /// Scaled quantile loss over all levels.
    Sql,
    /// Mean absolute scaled error of the median forecast.
    Mase,
}

impl fmt::Display for EvalLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalLoss::Sql => "SQL",
            EvalLoss::Mase => "MASE",
        })
    }
}

impl FromStr for EvalLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sql" => Ok(EvalLoss::Sql),
            "mase" => Ok(EvalLoss::Mase),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

/// Horizon, quantile levels and evaluation loss of a forecasting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastTask {
    horizon: usize,
    quantiles: Vec<f64>,
    eval_loss: EvalLoss,
}

impl ForecastTask {
    pub fn new(horizon: usize, quantiles: Vec<f64>, eval_loss: EvalLoss) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidTask("horizon must be >= 1".into()));
        }
        if quantiles.is_empty() {
            return Err(Error::InvalidTask("at least one quantile level is required".into()));
        }
        if quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(Error::InvalidTask("quantile levels must lie in (0, 1)".into()));
        }
        if quantiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTask("quantile levels must be strictly increasing".into()));
        }
        if eval_loss == EvalLoss::Mase && !quantiles.contains(&0.5) {
            return Err(Error::InvalidTask("MASE requires the 0.5 quantile level".into()));
        }
        Ok(Self {
            horizon,
            quantiles,
            eval_loss,
        })
    }

    /// Levels 0.1, 0.2, ..., 0.9.
    pub fn deciles() -> Vec<f64> {
        (1..=9).map(|k| k as f64 / 10.0).collect()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn n_quantiles(&self) -> usize {
        self.quantiles.len()
    }

    pub fn eval_loss(&self) -> EvalLoss {
        self.eval_loss
    }

    /// Index of the 0.5 level, if present.
    pub fn median_index(&self) -> Option<usize> {
        self.quantiles.iter().position(|&q| q == 0.5)
    }
}

/// An `H x Q` grid of quantile predictions for one item.
///
/// `origin_t` is the number of observations the forecaster saw, so the first
/// forecast step is observation `origin_t + 1` in 1-based indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub item_id: String,
    pub origin_t: usize,
    horizon: usize,
    n_quantiles: usize,
    values: Vec<f64>,
}

impl QuantileForecast {
    /// `values` is row-major: `values[h * n_quantiles + q]`.
    pub fn new(
        item_id: impl Into<String>,
        origin_t: usize,
        horizon: usize,
        n_quantiles: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        if values.len() != horizon * n_quantiles {
            return Err(Error::ShapeMismatch(format!(
                "forecast for `{item_id}` has {} values, expected {horizon}x{n_quantiles}",
                values.len()
            )));
        }
        Ok(Self {
            item_id,
            origin_t,
            horizon,
            n_quantiles,
            values,
        })
    }

    /// Every quantile equal to the point path.
    pub fn flat(item_id: impl Into<String>, origin_t: usize, point: &[f64], n_quantiles: usize) -> Self {
        let values = point
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n_quantiles))
            .collect();
        Self {
            item_id: item_id.into(),
            origin_t,
            horizon: point.len(),
            n_quantiles,
            values,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    pub fn get(&self, h: usize, q: usize) -> f64 {
        self.values[h * self.n_quantiles + q]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        &self.values[h * self.n_quantiles..(h + 1) * self.n_quantiles]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_quantiles.max(1))
    }

    /// The path of quantile level `q` over the horizon.
    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.horizon).map(|h| self.get(h, q)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_monotone(&self) -> bool {
        self.rows().all(|r| r.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Sorts each horizon row ascending so quantiles never cross.
pub fn enforce_quantile_monotonicity(mut forecast: QuantileForecast) -> QuantileForecast {
    let nq = forecast.n_quantiles.max(1);
    for row in forecast.values.chunks_mut(nq) {
        if row.windows(2).any(|w| w[0] > w[1]) {
            row.sort_by(f64::total_cmp);
        }
    }
    forecast
}

/// Forecasts of `M` models for a common set of items.
///
/// Models are indexed in insertion order; every model covers the same items
/// in the same order with identical `(origin_t, H, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelForecastSet {
    model_ids: Vec<String>,
    item_ids: Vec<String>,
    forecasts: Vec<Vec<QuantileForecast>>,
}

impl ModelForecastSet {
    /// `forecasts[m][i]` is model `m`'s forecast for item `i`.
    pub fn new(model_ids: Vec<String>, forecasts: Vec<Vec<QuantileForecast>>) -> Result<Self> {
        if model_ids.len() != forecasts.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} model ids for {} forecast lists",
                model_ids.len(),
                forecasts.len()
            )));
        }
        let item_ids: Vec<String> = forecasts
            .first()
            .map(|f| f.iter().map(|q| q.item_id.clone()).collect())
            .unwrap_or_default();
        let reference = forecasts.first();
        for (m, per_model) in forecasts.iter().enumerate() {
            if per_model.len() != item_ids.len() {
                return Err(Error::ShapeMismatch(format!(
                    "model `{}` covers {} items, expected {}",
                    model_ids[m],
                    per_model.len(),
                    item_ids.len()
                )));
            }
            for (i, f) in per_model.iter().enumerate() {
                let r = &reference.expect("non-empty")[i];
                if f.item_id != r.item_id
                    || f.origin_t != r.origin_t
                    || f.horizon != r.horizon
                    || f.n_quantiles != r.n_quantiles
                {
                    return Err(Error::ShapeMismatch(format!(
                        "model `{}` forecast for `{}` does not match model `{}`",
                        model_ids[m], f.item_id, model_ids[0]
                    )));
                }
            }
        }
        Ok(Self {
            model_ids,
            item_ids,
            forecasts,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn forecast(&self, model: usize, item: usize) -> &QuantileForecast {
        &self.forecasts[model][item]
    }

    pub fn model_forecasts(&self, model: usize) -> &[QuantileForecast] {
        &self.forecasts[model]
    }

    /// `(H, Q)` of the forecasts, or `None` for an empty set.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.forecasts
            .first()
            .and_then(|f| f.first())
            .map(|f| (f.horizon, f.n_quantiles))
    }

    /// Flattened inputs for item `i`, laid out `[m][h][q]`.
    pub fn item_inputs(&self, item: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for per_model in &self.forecasts {
            out.extend_from_slice(per_model[item].values());
        }
        out
    }

    /// Reorders models by `order` (a permutation of `0..M`).
    pub fn permute_models(&self, order: &[usize]) -> Self {
        Self {
            model_ids: order.iter().map(|&m| self.model_ids[m].clone()).collect(),
            item_ids: self.item_ids.clone(),
            forecasts: order.iter().map(|&m| self.forecasts[m].clone()).collect(),
        }
    }

    /// Keeps only the listed models, in the given order.
    pub fn select_models(&self, models: &[usize]) -> Self {
        self.permute_models(models)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn panel(series: Vec<TimeSeries>) -> TimeSeriesPanel {
        TimeSeriesPanel::new(series, 1, "D")
    }

    #[test]
    fn validate_accepts_clean_panel() {
        let p = panel(vec![TimeSeries::from_values("a", vec![1.0, 2.0, 3.0])]);
        assert_eq!(validate_panel(p.clone()).unwrap(), p);
    }

    #[test]
    fn validate_rejects_nan() {
        let p = panel(vec![TimeSeries::from_values("a", vec![1.0, f64::NAN])]);
        assert_eq!(
            validate_panel(p),
            Err(Error::NonFiniteValue {
                item: "a".into(),
                index: 1
            })
        );
    }

    #[test]
    fn validate_rejects_duplicates_and_empty() {
        let p = panel(vec![
            TimeSeries::from_values("a", vec![1.0]),
            TimeSeries::from_values("a", vec![2.0]),
        ]);
        assert_eq!(validate_panel(p), Err(Error::DuplicateItemId("a".into())));
        let p = panel(vec![TimeSeries::from_values("e", vec![])]);
        assert_eq!(validate_panel(p), Err(Error::EmptySeries("e".into())));
    }

    #[test]
    fn filter_keeps_long_series() {
        let p = panel(vec![
            TimeSeries::from_values("long", vec![0.0; 16]),
            TimeSeries::from_values("short", vec![0.0; 15]),
        ]);
        let kept = filter_min_length(p, 2).unwrap();
        assert_eq!(kept.item_ids(), vec!["long".to_string()]);
    }

    #[test]
    fn filter_identity_and_empty() {
        let p = panel(vec![
            TimeSeries::from_values("a", vec![0.0; 20]),
            TimeSeries::from_values("b", vec![0.0; 16]),
        ]);
        assert_eq!(filter_min_length(p.clone(), 2).unwrap(), p);
        assert_eq!(filter_min_length(p, 3), Err(Error::EmptyAfterFilter { min_length: 24 }));
    }

    #[test]
    fn monotonicity_examples() {
        let f = |row: Vec<f64>| QuantileForecast::new("a", 0, 1, 3, row).unwrap();
        assert_eq!(
            enforce_quantile_monotonicity(f(vec![1.0, 2.0, 3.0])).values(),
            [1.0, 2.0, 3.0]
        );
        assert_eq!(
            enforce_quantile_monotonicity(f(vec![3.0, 1.0, 2.0])).values(),
            [1.0, 2.0, 3.0]
        );
        assert_eq!(
            enforce_quantile_monotonicity(f(vec![2.0, 2.0, 2.0])).values(),
            [2.0, 2.0, 2.0]
        );
    }

    #[test]
    fn task_validation() {
        assert!(ForecastTask::new(0, vec![0.5], EvalLoss::Sql).is_err());
        assert!(ForecastTask::new(2, vec![0.5, 0.1], EvalLoss::Sql).is_err());
        assert!(ForecastTask::new(2, vec![0.0, 0.5], EvalLoss::Sql).is_err());
        assert!(ForecastTask::new(2, vec![0.1, 0.9], EvalLoss::Mase).is_err());
        assert!(ForecastTask::new(2, vec![0.1, 0.5, 0.9], EvalLoss::Mase).is_ok());
    }

    #[test]
    fn forecast_set_rejects_mismatched_items() {
        let a = QuantileForecast::flat("a", 5, &[1.0], 1);
        let b = QuantileForecast::flat("b", 5, &[1.0], 1);
        let err = ModelForecastSet::new(vec!["x".into(), "y".into()], vec![vec![a], vec![b]]);
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(values in prop::collection::vec(-1e6f64..1e6, 1..20)) {
            let p = panel(vec![TimeSeries::from_values("a", values)]);
            let once = validate_panel(p).unwrap();
            prop_assert_eq!(validate_panel(once.clone()).unwrap(), once);
        }

        #[test]
        fn filter_is_sub_multiset(lengths in prop::collection::vec(1usize..40, 1..10), h in 1usize..4) {
            let series: Vec<_> = lengths
                .iter()
                .enumerate()
                .map(|(i, &n)| TimeSeries::from_values(format!("s{i}"), vec![1.0; n]))
                .collect();
            let expected: Vec<String> = series
                .iter()
                .filter(|s| s.len() >= 8 * h)
                .map(|s| s.item_id.clone())
                .collect();
            match filter_min_length(panel(series), h) {
                Ok(kept) => {
                    prop_assert!(kept.series.iter().all(|s| s.len() >= 8 * h));
                    prop_assert_eq!(kept.item_ids(), expected);
                }
                Err(Error::EmptyAfterFilter { .. }) => prop_assert!(expected.is_empty()),
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn monotonicity_sorts_and_is_idempotent(values in prop::collection::vec(-10f64..10.0, 12)) {
            let f = QuantileForecast::new("a", 0, 3, 4, values.clone()).unwrap();
            let once = enforce_quantile_monotonicity(f);
            prop_assert!(once.is_monotone());
            for (h, row) in once.rows().enumerate() {
                let mut expected = values[h * 4..(h + 1) * 4].to_vec();
                expected.sort_by(f64::total_cmp);
                prop_assert_eq!(row.to_vec(), expected);
            }
            prop_assert_eq!(enforce_quantile_monotonicity(once.clone()), once);
        }
    }
}
