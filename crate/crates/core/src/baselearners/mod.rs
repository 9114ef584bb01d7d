//! Local level-1 forecasters and the hook for importing external forecasts.
//!
//! Every learner produces a point path; quantiles are the point path plus
//! median-centred empirical quantiles of the in-sample one-step residuals.

mod autoregressive;
mod external;
mod smoothing;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

pub use autoregressive::{fit_linear_ar, LinearArFit};
pub use external::{import_external, ExternalForecasts};
pub use smoothing::{fit_ses, fit_theta, SesFit, ThetaFit};

use crate::error::{Error, Result};
use crate::series::{enforce_quantile_monotonicity, ForecastTask, QuantileForecast, TimeSeries};

/// SES smoothing grid 0.05, 0.10, ..., 0.95.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Which base learner to run, with its settings.
#[derive(Debug, Clone, PartialEq)]
pub enum BaseLearnerSpec {
    SeasonalNaive,
    Ses {
        alphas: Vec<f64>,
    },
    Theta {
        alphas: Vec<f64>,
    },
    /// `lags = None` picks `min(2m, T/4)` lags at fit time.
    LinearAr {
        lags: Option<usize>,
        ridge: f64,
    },
    /// Forecasts read from a file in the forecast record format.
    External {
        name: String,
        path: PathBuf,
    },
}

impl BaseLearnerSpec {
    pub fn ses() -> Self {
        BaseLearnerSpec::Ses {
            alphas: default_alpha_grid(),
        }
    }

    pub fn theta() -> Self {
        BaseLearnerSpec::Theta {
            alphas: default_alpha_grid(),
        }
    }

    pub fn linear_ar() -> Self {
        BaseLearnerSpec::LinearAr {
            lags: None,
            ridge: DEFAULT_RIDGE,
        }
    }

    /// The four built-in learners.
    pub fn defaults() -> Vec<Self> {
        vec![
            BaseLearnerSpec::SeasonalNaive,
            Self::ses(),
            Self::theta(),
            Self::linear_ar(),
        ]
    }

    /// A smaller set without the autoregressive learner.
    pub fn reduced() -> Vec<Self> {
        vec![BaseLearnerSpec::SeasonalNaive, Self::ses(), Self::theta()]
    }

    pub fn name(&self) -> String {
        match self {
            BaseLearnerSpec::SeasonalNaive => "SeasonalNaive".into(),
            BaseLearnerSpec::Ses { .. } => "SES".into(),
            BaseLearnerSpec::Theta { .. } => "Theta".into(),
            BaseLearnerSpec::LinearAr { lags: None, .. } => "LinearAR".into(),
            BaseLearnerSpec::LinearAr { lags: Some(p), .. } => format!("LinearAR({p})"),
            BaseLearnerSpec::External { name, .. } => name.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaseLearnerSpec::Ses { alphas } | BaseLearnerSpec::Theta { alphas } => {
                if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
                    return Err(Error::InvalidConfig(format!(
                        "{}: smoothing grid must be non-empty with values in (0, 1]",
                        self.name()
                    )));
                }
            }
            BaseLearnerSpec::LinearAr { lags, ridge } => {
                if *lags == Some(0) || !(*ridge > 0.0) {
                    return Err(Error::InvalidConfig("LinearAR needs lags >= 1 and ridge > 0".into()));
                }
            }
            BaseLearnerSpec::SeasonalNaive | BaseLearnerSpec::External { .. } => {}
        }
        Ok(())
    }
}

impl fmt::Display for BaseLearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for BaseLearnerSpec {
    type Err = Error;

    /// Accepts `SeasonalNaive`, `SES`, `Theta`, `LinearAR`, `LinearAR(p)` and
    /// `External(name=path)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        let inner = |prefix: &str| {
            s.get(prefix.len()..)
                .and_then(|rest| rest.strip_prefix('('))
                .and_then(|rest| rest.strip_suffix(')'))
                .map(str::trim)
        };
        match lower.as_str() {
            "seasonalnaive" => return Ok(BaseLearnerSpec::SeasonalNaive),
            "ses" => return Ok(Self::ses()),
            "theta" => return Ok(Self::theta()),
            "linearar" => return Ok(Self::linear_ar()),
            _ => {}
        }
        if lower.starts_with("linearar(") {
            let p = inner("LinearAR")
                .and_then(|p| p.parse::<usize>().ok())
                .filter(|&p| p >= 1)
                .ok_or_else(|| Error::InvalidConfig(format!("invalid learner `{s}`")))?;
            return Ok(BaseLearnerSpec::LinearAr {
                lags: Some(p),
                ridge: DEFAULT_RIDGE,
            });
        }
        if lower.starts_with("external(") {
            let body = inner("External").ok_or_else(|| Error::InvalidConfig(format!("invalid learner `{s}`")))?;
            let (name, path) = body
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("external learner `{s}` needs name=path")))?;
            return Ok(BaseLearnerSpec::External {
                name: name.trim().to_string(),
                path: PathBuf::from(path.trim()),
            });
        }
        Err(Error::InvalidConfig(format!("unknown base learner `{s}`")))
    }
}

/// How quantiles are derived from in-sample residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualQuantilePolicy {
    /// Below this many residuals every offset is zero.
    pub min_history: usize,
}

impl Default for ResidualQuantilePolicy {
    fn default() -> Self {
        Self { min_history: 3 }
    }
}

/// Linear-interpolation empirical quantile of sorted data.
pub(crate) fn empirical_quantile(sorted: &[f64], level: f64) -> f64 {
    let pos = level * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

impl ResidualQuantilePolicy {
    /// Offsets `quantile_q(r) - median(r)`, one per level.
    pub fn offsets(&self, residuals: &[f64], levels: &[f64]) -> Vec<f64> {
        let min = self.min_history.max(1);
        if residuals.len() < min {
            return vec![0.0; levels.len()];
        }
        let mut sorted = residuals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = empirical_quantile(&sorted, 0.5);
        levels
            .iter()
            .map(|&q| empirical_quantile(&sorted, q) - median)
            .collect()
    }
}

/// Parameters a learner keeps after fitting. Forecasting with a fitted
/// learner re-reads the state (levels, lags, seasonal pattern) from the
/// given context but keeps the fitted parameters.
#[derive(Debug, Clone)]
pub enum FittedLearner {
    SeasonalNaive { m: usize },
    Ses(SesFit),
    Theta(ThetaFit),
    LinearAr(LinearArFit),
    External(Arc<ExternalForecasts>),
}

impl FittedLearner {
    /// Point forecast for the `horizon` steps after `history`.
    pub fn point_path(&self, history: &TimeSeries, horizon: usize) -> Result<Vec<f64>> {
        let y = &history.values;
        match self {
            FittedLearner::SeasonalNaive { m } => {
                let m = (*m).max(1);
                if y.len() < m {
                    return Err(insufficient("SeasonalNaive", y.len(), m));
                }
                let base = y.len() - m;
                Ok((0..horizon).map(|h| y[base + h % m]).collect())
            }
            FittedLearner::Ses(fit) => fit.point_path(y, horizon),
            FittedLearner::Theta(fit) => fit.point_path(y, horizon),
            FittedLearner::LinearAr(fit) => fit.point_path(y, horizon),
            FittedLearner::External(ext) => {
                let f = ext.lookup(&history.item_id, history.len())?;
                Ok(f.column(f.n_quantiles() / 2))
            }
        }
    }

    /// In-sample one-step residuals `y_t - yhat_t` on `history`.
    pub fn residuals(&self, history: &TimeSeries) -> Vec<f64> {
        let y = &history.values;
        match self {
            FittedLearner::SeasonalNaive { m } => {
                let m = (*m).max(1);
                y.iter().skip(m).zip(y).map(|(now, past)| now - past).collect()
            }
            FittedLearner::Ses(fit) => fit.residuals(y),
            FittedLearner::Theta(fit) => fit.residuals(y),
            FittedLearner::LinearAr(fit) => fit.residuals(y),
            FittedLearner::External(_) => Vec::new(),
        }
    }

    /// Quantile forecast for the steps after `history`.
    pub fn forecast(
        &self,
        history: &TimeSeries,
        task: &ForecastTask,
        policy: &ResidualQuantilePolicy,
    ) -> Result<QuantileForecast> {
        if let FittedLearner::External(ext) = self {
            let f = ext.lookup(&history.item_id, history.len())?;
            if f.horizon() != task.horizon() || f.n_quantiles() != task.n_quantiles() {
                return Err(Error::ShapeMismatch(format!(
                    "external forecast for `{}` is {}x{}, task is {}x{}",
                    history.item_id,
                    f.horizon(),
                    f.n_quantiles(),
                    task.horizon(),
                    task.n_quantiles()
                )));
            }
            return Ok(enforce_quantile_monotonicity(f.clone()));
        }
        let point = self.point_path(history, task.horizon())?;
        if let Some(bad) = point.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                item: history.item_id.clone(),
                index: bad,
            });
        }
        let offsets = policy.offsets(&self.residuals(history), task.quantiles());
        let values = point.iter().flat_map(|p| offsets.iter().map(move |o| p + o)).collect();
        let forecast = QuantileForecast::new(
            history.item_id.clone(),
            history.len(),
            task.horizon(),
            task.n_quantiles(),
            values,
        )?;
        Ok(enforce_quantile_monotonicity(forecast))
    }
}

pub(crate) fn insufficient(learner: &str, len: usize, needed: usize) -> Error {
    Error::InsufficientHistory {
        learner: learner.to_string(),
        len,
        needed,
    }
}

/// A learner ready to fit, with any external forecasts already loaded.
#[derive(Debug, Clone)]
pub struct BaseLearner {
    spec: BaseLearnerSpec,
    external: Option<Arc<ExternalForecasts>>,
}

impl BaseLearner {
    /// Validates the spec and loads external forecasts for `items`.
    pub fn prepare(spec: BaseLearnerSpec, task: &ForecastTask, items: &[String]) -> Result<Self> {
        spec.validate()?;
        let external = match &spec {
            BaseLearnerSpec::External { name, path } => {
                let ext = import_external(path, task, items)?.for_model(name)?;
                Some(Arc::new(ext))
            }
            _ => None,
        };
        Ok(Self { spec, external })
    }

    pub fn spec(&self) -> &BaseLearnerSpec {
        &self.spec
    }

    pub fn name(&self) -> String {
        self.spec.name()
    }

    /// Fits the learner's parameters on `history`.
    pub fn fit(&self, history: &TimeSeries, m: usize) -> Result<FittedLearner> {
        let y = &history.values;
        match &self.spec {
            BaseLearnerSpec::SeasonalNaive => {
                let m = m.max(1);
                if y.len() < m {
                    return Err(insufficient("SeasonalNaive", y.len(), m));
                }
                Ok(FittedLearner::SeasonalNaive { m })
            }
            BaseLearnerSpec::Ses { alphas } => fit_ses(y, alphas).map(FittedLearner::Ses),
            BaseLearnerSpec::Theta { alphas } => fit_theta(y, m, alphas).map(FittedLearner::Theta),
            BaseLearnerSpec::LinearAr { lags, ridge } => {
                let p = lags.unwrap_or_else(|| (2 * m.max(1)).min(y.len() / 4)).max(1);
                fit_linear_ar(y, p, *ridge).map(FittedLearner::LinearAr)
            }
            BaseLearnerSpec::External { .. } => {
                let ext = self.external.clone().expect("external forecasts loaded in prepare");
                ext.lookup(&history.item_id, history.len())?;
                Ok(FittedLearner::External(ext))
            }
        }
    }
}

/// Fits `spec` on `history` and forecasts the next `task.horizon()` steps.
pub fn fit_predict(
    spec: &BaseLearnerSpec,
    history: &TimeSeries,
    m: usize,
    task: &ForecastTask,
) -> Result<QuantileForecast> {
    let learner = BaseLearner::prepare(spec.clone(), task, std::slice::from_ref(&history.item_id))?;
    learner
        .fit(history, m)?
        .forecast(history, task, &ResidualQuantilePolicy::default())
}

/// Point forecast of `spec` fitted on `history`.
pub fn point_path(spec: &BaseLearnerSpec, history: &TimeSeries, m: usize, horizon: usize) -> Result<Vec<f64>> {
    let task = ForecastTask::new(horizon, vec![0.5], crate::series::EvalLoss::Sql)?;
    let learner = BaseLearner::prepare(spec.clone(), &task, std::slice::from_ref(&history.item_id))?;
    learner.fit(history, m)?.point_path(history, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::EvalLoss;

    fn ts(values: &[f64]) -> TimeSeries {
        TimeSeries::from_values("a", values.to_vec())
    }

    #[test]
    fn seasonal_naive_paths() {
        let h = ts(&[1.0, 2.0, 3.0, 4.0]);
        let sn = BaseLearnerSpec::SeasonalNaive;
        assert_eq!(point_path(&sn, &h, 2, 3).unwrap(), vec![3.0, 4.0, 3.0]);
        assert_eq!(point_path(&sn, &h, 1, 3).unwrap(), vec![4.0, 4.0, 4.0]);
        assert!(matches!(
            point_path(&sn, &ts(&[1.0]), 2, 1),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn equal_residuals_give_flat_quantiles() {
        let task = ForecastTask::new(3, vec![0.1, 0.5, 0.9], EvalLoss::Sql).unwrap();
        let f = fit_predict(&BaseLearnerSpec::SeasonalNaive, &ts(&[1.0, 2.0, 3.0, 4.0]), 1, &task).unwrap();
        for row in f.rows() {
            assert_eq!(row, [4.0, 4.0, 4.0]);
        }
        assert_eq!(f.origin_t, 4);
    }

    #[test]
    fn ses_constant_history() {
        let p = point_path(&BaseLearnerSpec::ses(), &ts(&[5.0; 4]), 1, 4).unwrap();
        assert_eq!(p, vec![5.0; 4]);
    }

    #[test]
    fn residual_offsets_are_centred() {
        let policy = ResidualQuantilePolicy::default();
        let offsets = policy.offsets(&[-2.0, -1.0, 0.0, 1.0, 2.0], &[0.25, 0.5, 0.75]);
        assert_eq!(offsets, vec![-1.0, 0.0, 1.0]);
        assert_eq!(policy.offsets(&[1.0, 9.0], &[0.1, 0.9]), vec![0.0, 0.0]);
    }

    #[test]
    fn learners_are_deterministic() {
        let task = ForecastTask::new(4, ForecastTask::deciles(), EvalLoss::Sql).unwrap();
        let y: Vec<f64> = (0..40).map(|t| ((t * 7919) % 13) as f64 + 0.3 * t as f64).collect();
        for spec in BaseLearnerSpec::defaults() {
            let a = fit_predict(&spec, &ts(&y), 4, &task).unwrap();
            let b = fit_predict(&spec, &ts(&y), 4, &task).unwrap();
            assert_eq!(a, b, "{spec}");
            assert!(a.is_monotone());
        }
    }

    #[test]
    fn spec_names_parse() {
        for spec in BaseLearnerSpec::defaults() {
            assert_eq!(spec.name().parse::<BaseLearnerSpec>().unwrap(), spec);
        }
        assert_eq!(
            "LinearAR(3)".parse::<BaseLearnerSpec>().unwrap(),
            BaseLearnerSpec::LinearAr {
                lags: Some(3),
                ridge: DEFAULT_RIDGE
            }
        );
        let ext: BaseLearnerSpec = "External(chronos=/tmp/c.csv)".parse().unwrap();
        assert_eq!(ext.name(), "chronos");
        assert!("Prophet".parse::<BaseLearnerSpec>().is_err());
    }
}
