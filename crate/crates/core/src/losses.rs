//! Quantile (pinball) loss, scaled quantile loss (SQL), MASE and the
//! dataset-level average.

use crate::error::{Error, Result};
use crate::series::{EvalLoss, ForecastTask, QuantileForecast};

/// Pinball loss at level `q`, with the factor 2 so that the median level
/// reduces to absolute error.
#[inline]
pub fn pinball(y_hat: f64, y: f64, q: f64) -> f64 {
    if y >= y_hat {
        2.0 * q * (y - y_hat)
    } else {
        2.0 * (1.0 - q) * (y_hat - y)
    }
}

/// Subgradient of [`pinball`] with respect to `y_hat`; zero at the kink.
#[inline]
pub fn pinball_grad(y_hat: f64, y: f64, q: f64) -> f64 {
    if y > y_hat {
        -2.0 * q
    } else if y < y_hat {
        2.0 * (1.0 - q)
    } else {
        0.0
    }
}

/// Historic absolute seasonal error `a_i` of one series.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SeasonalScale(f64);

impl SeasonalScale {
    pub fn new(a: f64) -> Self {
        debug_assert!(a >= 0.0);
        Self(a)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// Mean absolute lag-`m` difference of the series.
pub fn seasonal_error(values: &[f64], m: usize) -> Result<SeasonalScale> {
    let m = m.max(1);
    if values.len() <= m {
        return Err(Error::SeriesTooShort { len: values.len(), m });
    }
    let sum: f64 = values[m..]
        .iter()
        .zip(values)
        .map(|(now, past)| (now - past).abs())
        .sum();
    Ok(SeasonalScale(sum / (values.len() - m) as f64))
}

/// Score of one item under a dataset loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemScore {
    pub item_id: String,
    pub value: f64,
    /// Set when the item's seasonal scale is zero and the score is undefined.
    pub excluded: bool,
}

impl ItemScore {
    pub fn excluded(item_id: impl Into<String>) -> Self {
        Self {
            item_id: item_id.into(),
            value: 0.0,
            excluded: true,
        }
    }
}

fn check_actual(forecast: &QuantileForecast, actual: &[f64]) -> Result<()> {
    if actual.len() != forecast.horizon() {
        return Err(Error::ShapeMismatch(format!(
            "item `{}`: {} actual values for horizon {}",
            forecast.item_id,
            actual.len(),
            forecast.horizon()
        )));
    }
    Ok(())
}

/// Unscaled SQL numerator: mean pinball over `(h, q)`.
pub fn mean_pinball(values: &[f64], actual: &[f64], levels: &[f64]) -> f64 {
    let nq = levels.len();
    let mut total = 0.0;
    for (h, &y) in actual.iter().enumerate() {
        for (q, &level) in levels.iter().enumerate() {
            total += pinball(values[h * nq + q], y, level);
        }
    }
    total / (actual.len() * nq) as f64
}

/// Mean absolute error of a point path.
pub fn mean_absolute_error(point: &[f64], actual: &[f64]) -> f64 {
    let total: f64 = point.iter().zip(actual).map(|(p, y)| (p - y).abs()).sum();
    total / actual.len() as f64
}

/// Scaled quantile loss of one item.
pub fn sql_item(
    forecast: &QuantileForecast,
    actual: &[f64],
    scale: SeasonalScale,
    levels: &[f64],
) -> Result<ItemScore> {
    check_actual(forecast, actual)?;
    if levels.len() != forecast.n_quantiles() {
        return Err(Error::ShapeMismatch(format!(
            "item `{}`: {} levels for {} quantile columns",
            forecast.item_id,
            levels.len(),
            forecast.n_quantiles()
        )));
    }
    if scale.is_zero() {
        return Err(Error::ZeroScale);
    }
    Ok(ItemScore {
        item_id: forecast.item_id.clone(),
        value: mean_pinball(forecast.values(), actual, levels) / scale.value(),
        excluded: false,
    })
}

/// Mean absolute scaled error of a point path.
pub fn mase_item(item_id: &str, point: &[f64], actual: &[f64], scale: SeasonalScale) -> Result<ItemScore> {
    if point.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!(
            "item `{item_id}`: point path of {} for {} actual values",
            point.len(),
            actual.len()
        )));
    }
    if scale.is_zero() {
        return Err(Error::ZeroScale);
    }
    Ok(ItemScore {
        item_id: item_id.to_string(),
        value: mean_absolute_error(point, actual) / scale.value(),
        excluded: false,
    })
}

/// Scores one item with the task's evaluation loss. Items with a zero scale
/// come back flagged as excluded.
pub fn score_item(
    task: &ForecastTask,
    forecast: &QuantileForecast,
    actual: &[f64],
    scale: SeasonalScale,
) -> Result<ItemScore> {
    check_actual(forecast, actual)?;
    if scale.is_zero() {
        return Ok(ItemScore::excluded(forecast.item_id.clone()));
    }
    match task.eval_loss() {
        EvalLoss::Sql => sql_item(forecast, actual, scale, task.quantiles()),
        EvalLoss::Mase => {
            let median = task
                .median_index()
                .ok_or_else(|| Error::InvalidTask("MASE requires the 0.5 level".into()))?;
            mase_item(&forecast.item_id, &forecast.column(median), actual, scale)
        }
    }
}

/// Average of per-item scores over non-excluded items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetLoss {
    pub value: f64,
    pub n_scored: usize,
    pub n_excluded: usize,
}

pub fn dataset_loss(scores: &[ItemScore]) -> Result<DatasetLoss> {
    let (sum, n) = scores
        .iter()
        .filter(|s| !s.excluded)
        .fold((0.0, 0usize), |(sum, n), s| (sum + s.value, n + 1));
    if n == 0 {
        return Err(Error::AllItemsExcluded);
    }
    Ok(DatasetLoss {
        value: sum / n as f64,
        n_scored: n,
        n_excluded: scores.len() - n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(1.0, 1.0, 0.3), 0.0);
        assert_eq!(pinball(0.0, 1.0, 0.5), 1.0);
        assert!((pinball(2.0, 1.0, 0.9) - 0.2).abs() < EPS);
    }

    #[test]
    fn seasonal_error_examples() {
        assert_eq!(seasonal_error(&[1.0, 2.0, 3.0, 4.0], 1).unwrap().value(), 1.0);
        assert_eq!(seasonal_error(&[5.0; 4], 1).unwrap().value(), 0.0);
        assert_eq!(seasonal_error(&[1.0, 3.0, 2.0, 4.0], 2).unwrap().value(), 1.0);
        assert_eq!(
            seasonal_error(&[1.0, 2.0], 2),
            Err(Error::SeriesTooShort { len: 2, m: 2 })
        );
    }

    #[test]
    fn sql_examples() {
        let levels = [0.1, 0.5, 0.9];
        let f = QuantileForecast::new("a", 0, 1, 3, vec![0.0; 3]).unwrap();
        let s = sql_item(&f, &[1.0], SeasonalScale::new(1.0), &levels).unwrap();
        assert!((s.value - 1.0).abs() < EPS);

        let perfect = QuantileForecast::flat("a", 0, &[1.0, 2.0], 3);
        let s = sql_item(&perfect, &[1.0, 2.0], SeasonalScale::new(0.7), &levels).unwrap();
        assert_eq!(s.value, 0.0);

        assert_eq!(
            sql_item(&f, &[1.0], SeasonalScale::new(0.0), &levels),
            Err(Error::ZeroScale)
        );
    }

    #[test]
    fn mase_examples() {
        let one = SeasonalScale::new(1.0);
        assert_eq!(mase_item("a", &[3.0, 4.0], &[3.0, 6.0], one).unwrap().value, 1.0);
        assert_eq!(mase_item("a", &[3.0, 6.0], &[3.0, 6.0], one).unwrap().value, 0.0);
        let half = mase_item("a", &[3.0, 4.0], &[3.0, 6.0], SeasonalScale::new(2.0)).unwrap();
        assert_eq!(half.value, 0.5);
    }

    #[test]
    fn dataset_loss_examples() {
        let s = |v: f64| ItemScore {
            item_id: "x".into(),
            value: v,
            excluded: false,
        };
        assert_eq!(dataset_loss(&[s(1.0), s(3.0)]).unwrap().value, 2.0);
        let d = dataset_loss(&[s(1.0), ItemScore::excluded("y")]).unwrap();
        assert_eq!((d.value, d.n_excluded), (1.0, 1));
        assert_eq!(dataset_loss(&[ItemScore::excluded("y")]), Err(Error::AllItemsExcluded));
    }

    #[test]
    fn zero_scale_is_excluded_by_score_item() {
        let task = ForecastTask::new(1, vec![0.5], EvalLoss::Sql).unwrap();
        let f = QuantileForecast::flat("a", 3, &[1.0], 1);
        let s = score_item(&task, &f, &[2.0], SeasonalScale::new(0.0)).unwrap();
        assert!(s.excluded);
    }

    proptest! {
        #[test]
        fn pinball_matches_closed_forms(y_hat in -100f64..100.0, y in -100f64..100.0, q in 0.01f64..0.99) {
            let v = pinball(y_hat, y, q);
            prop_assert!(v >= 0.0);
            let expected = if y >= y_hat { 2.0 * q * (y - y_hat) } else { 2.0 * (1.0 - q) * (y_hat - y) };
            prop_assert_eq!(v, expected);
        }

        #[test]
        fn sql_at_median_equals_mase(
            point in prop::collection::vec(-50f64..50.0, 1..6),
            shift in prop::collection::vec(-10f64..10.0, 6),
            a in 0.01f64..10.0,
        ) {
            let actual: Vec<f64> = point.iter().zip(&shift).map(|(p, s)| p + s).collect();
            let f = QuantileForecast::flat("a", 0, &point, 1);
            let scale = SeasonalScale::new(a);
            let sql = sql_item(&f, &actual, scale, &[0.5]).unwrap().value;
            let mase = mase_item("a", &point, &actual, scale).unwrap().value;
            prop_assert!((sql - mase).abs() <= 1e-12);
        }

        #[test]
        fn seasonal_error_translation_invariant(
            values in prop::collection::vec(-100f64..100.0, 3..30),
            c in -1e3f64..1e3,
            m in 1usize..3,
        ) {
            let a = seasonal_error(&values, m).unwrap().value();
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let b = seasonal_error(&shifted, m).unwrap().value();
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn scores_invariant_under_joint_scaling(
            point in prop::collection::vec(-50f64..50.0, 3),
            actual in prop::collection::vec(-50f64..50.0, 3),
            a in 0.1f64..10.0,
            lambda in 0.1f64..10.0,
        ) {
            let levels = [0.5];
            let f = QuantileForecast::flat("a", 0, &point, 1);
            let base = sql_item(&f, &actual, SeasonalScale::new(a), &levels).unwrap().value;
            let scaled_point: Vec<f64> = point.iter().map(|v| v * lambda).collect();
            let scaled_actual: Vec<f64> = actual.iter().map(|v| v * lambda).collect();
            let g = QuantileForecast::flat("a", 0, &scaled_point, 1);
            let scaled = sql_item(&g, &scaled_actual, SeasonalScale::new(a * lambda), &levels).unwrap().value;
            prop_assert!((base - scaled).abs() <= 1e-9 * (1.0 + base));
            let mase = mase_item("a", &scaled_point, &scaled_actual, SeasonalScale::new(a * lambda)).unwrap().value;
            prop_assert!((base - mase).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
