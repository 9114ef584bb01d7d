//! Simple exponential smoothing and the Theta method.

use super::insufficient;
use crate::error::Result;

/// Autocorrelation at the seasonal lag above which Theta deseasonalizes.
pub const SEASONALITY_ACF_THRESHOLD: f64 = 0.5;

/// One-step SES forecasts `l_{t-1}` for `t = 1..T` and the final level.
fn ses_pass(y: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let mut level = y[0];
    let mut preds = Vec::with_capacity(y.len().saturating_sub(1));
    for &v in &y[1..] {
        preds.push(level);
        level = alpha * v + (1.0 - alpha) * level;
    }
    (preds, level)
}

fn one_step_mae(y: &[f64], alpha: f64) -> f64 {
    let (preds, _) = ses_pass(y, alpha);
    let total: f64 = y[1..].iter().zip(&preds).map(|(v, p)| (v - p).abs()).sum();
    total / preds.len() as f64
}

/// Grid value with the smallest in-sample one-step MAE; the first wins ties.
fn select_alpha(y: &[f64], alphas: &[f64]) -> f64 {
    let mut best = (alphas[0], f64::INFINITY);
    for &alpha in alphas {
        let mae = one_step_mae(y, alpha);
        if mae < best.1 {
            best = (alpha, mae);
        }
    }
    best.0
}

/// Fitted simple exponential smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SesFit {
    pub alpha: f64,
}

pub fn fit_ses(y: &[f64], alphas: &[f64]) -> Result<SesFit> {
    if y.len() < 3 {
        return Err(insufficient("SES", y.len(), 3));
    }
    Ok(SesFit {
        alpha: select_alpha(y, alphas),
    })
}

impl SesFit {
    pub fn point_path(&self, y: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if y.is_empty() {
            return Err(insufficient("SES", 0, 1));
        }
        let (_, level) = ses_pass(y, self.alpha);
        Ok(vec![level; horizon])
    }

    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        if y.len() < 2 {
            return Vec::new();
        }
        let (preds, _) = ses_pass(y, self.alpha);
        y[1..].iter().zip(&preds).map(|(v, p)| v - p).collect()
    }
}

/// Sample autocorrelation at `lag`.
pub(crate) fn autocorrelation(y: &[f64], lag: usize) -> f64 {
    if lag == 0 || y.len() <= lag {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let denom: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = y[lag..].iter().zip(y).map(|(a, b)| (a - mean) * (b - mean)).sum();
    num / denom
}

/// Additive seasonal indices from a classical decomposition; `indices[t % m]`
/// applies to 0-based position `t`. Indices sum to zero.
fn seasonal_indices(y: &[f64], m: usize) -> Vec<f64> {
    let n = y.len();
    let half = m / 2;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for t in half..n.saturating_sub(half) {
        let trend = if m % 2 == 1 {
            y[t - half..=t + half].iter().sum::<f64>() / m as f64
        } else {
            if t + half >= n {
                continue;
            }
            let inner: f64 = y[t - half + 1..t + half].iter().sum();
            (inner + 0.5 * (y[t - half] + y[t + half])) / m as f64
        };
        sums[t % m] += y[t] - trend;
        counts[t % m] += 1;
    }
    let mut indices: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mean = indices.iter().sum::<f64>() / m as f64;
    indices.iter_mut().for_each(|s| *s -= mean);
    indices
}

/// Least-squares line `a + b t` over `t = 1..T`.
fn linear_trend(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dt = (i + 1) as f64 - t_mean;
        sxy += dt * (v - y_mean);
        sxx += dt * dt;
    }
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (y_mean - b * t_mean, b)
}

/// Fitted Theta(2) model.
///
/// The forecast averages the extrapolated theta=0 line (the linear trend)
/// with the theta=2 line, whose deviation from the trend is extrapolated by
/// SES while the trend itself is carried forward.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaFit {
    pub alpha: f64,
    /// Seasonal period when the series was deseasonalized.
    pub seasonal_period: Option<usize>,
}

/// Intermediate quantities of a Theta pass over one context.
struct ThetaState {
    season: Vec<f64>,
    intercept: f64,
    slope: f64,
    theta2_deviation: Vec<f64>,
}

impl ThetaFit {
    fn state(y: &[f64], period: Option<usize>) -> ThetaState {
        let season = match period {
            Some(m) if y.len() >= 2 * m => seasonal_indices(y, m),
            _ => vec![0.0],
        };
        let m = season.len();
        let adjusted: Vec<f64> = y.iter().enumerate().map(|(t, v)| v - season[t % m]).collect();
        let (intercept, slope) = linear_trend(&adjusted);
        // theta=2 line minus the theta=0 line.
        let theta2_deviation = adjusted
            .iter()
            .enumerate()
            .map(|(t, v)| 2.0 * (v - intercept - slope * (t + 1) as f64))
            .collect();
        ThetaState {
            season,
            intercept,
            slope,
            theta2_deviation,
        }
    }

    pub fn point_path(&self, y: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if y.len() < 2 {
            return Err(insufficient("Theta", y.len(), 2));
        }
        let st = Self::state(y, self.seasonal_period);
        let (_, level) = ses_pass(&st.theta2_deviation, self.alpha);
        let n = y.len();
        let m = st.season.len();
        Ok((1..=horizon)
            .map(|h| {
                let t = (n + h) as f64;
                let trend = st.intercept + st.slope * t;
                let theta2 = trend + level;
                0.5 * (trend + theta2) + st.season[(n + h - 1) % m]
            })
            .collect())
    }

    pub fn residuals(&self, y: &[f64]) -> Vec<f64> {
        if y.len() < 2 {
            return Vec::new();
        }
        let st = Self::state(y, self.seasonal_period);
        let (preds, _) = ses_pass(&st.theta2_deviation, self.alpha);
        let m = st.season.len();
        (1..y.len())
            .map(|t| {
                let trend = st.intercept + st.slope * (t + 1) as f64;
                let fitted = trend + 0.5 * preds[t - 1] + st.season[t % m];
                y[t] - fitted
            })
            .collect()
    }
}

pub fn fit_theta(y: &[f64], m: usize, alphas: &[f64]) -> Result<ThetaFit> {
    if y.len() < 3 {
        return Err(insufficient("Theta", y.len(), 3));
    }
    let seasonal_period = (m > 1 && y.len() >= 2 * m && autocorrelation(y, m) > SEASONALITY_ACF_THRESHOLD).then_some(m);
    let st = ThetaFit::state(y, seasonal_period);
    Ok(ThetaFit {
        alpha: select_alpha(&st.theta2_deviation, alphas),
        seasonal_period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselearners::default_alpha_grid;

    #[test]
    fn ses_alternating_matches_grid_oracle() {
        let y: Vec<f64> = (0..20).map(|t| (t % 2) as f64).collect();
        let grid = default_alpha_grid();
        // Independent oracle: recompute each MAE with an explicit loop.
        let mut best = (0.0, f64::INFINITY);
        for &a in &grid {
            let mut level = y[0];
            let mut err = 0.0;
            for &v in &y[1..] {
                err += (v - level).abs();
                level = a * v + (1.0 - a) * level;
            }
            let mae = err / 19.0;
            if mae < best.1 {
                best = (a, mae);
            }
        }
        assert_eq!(fit_ses(&y, &grid).unwrap().alpha, best.0);
    }

    #[test]
    fn ses_unit_alpha_returns_last_value() {
        let y = [1.0, 2.0, 4.0, 7.0, 11.0, 16.0, 22.0];
        let fit = fit_ses(&y, &[0.5, 1.0]).unwrap();
        assert_eq!(fit.alpha, 1.0);
        assert_eq!(fit.point_path(&y, 1).unwrap(), vec![22.0]);
    }

    #[test]
    fn theta_continues_exact_line() {
        let y: Vec<f64> = (1..=30).map(|t| 2.0 + 3.0 * t as f64).collect();
        for m in [1, 4] {
            let fit = fit_theta(&y, m, &default_alpha_grid()).unwrap();
            let path = fit.point_path(&y, 5).unwrap();
            for (h, v) in path.iter().enumerate() {
                let expected = 2.0 + 3.0 * (30 + h + 1) as f64;
                assert!((v - expected).abs() < 1e-6, "m={m} h={h}: {v} vs {expected}");
            }
        }
    }

    #[test]
    fn theta_detects_strong_seasonality() {
        let pattern = [0.0, 10.0, 3.0, -7.0];
        let y: Vec<f64> = (0..32).map(|t| 50.0 + pattern[t % 4]).collect();
        let fit = fit_theta(&y, 4, &default_alpha_grid()).unwrap();
        assert_eq!(fit.seasonal_period, Some(4));
        let path = fit.point_path(&y, 4).unwrap();
        for (h, v) in path.iter().enumerate() {
            assert!((v - (50.0 + pattern[(32 + h) % 4])).abs() < 1e-6);
        }
        assert_eq!(fit_theta(&y, 1, &default_alpha_grid()).unwrap().seasonal_period, None);
    }

    #[test]
    fn seasonal_indices_sum_to_zero() {
        let y: Vec<f64> = (0..30).map(|t| (t as f64 * 0.7).sin() * 4.0 + t as f64).collect();
        for m in [3, 4, 7] {
            let s = seasonal_indices(&y, m);
            assert_eq!(s.len(), m);
            assert!(s.iter().sum::<f64>().abs() < 1e-9);
        }
    }
}
