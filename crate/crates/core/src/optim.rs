//! Full-batch Adam with a plateau learning-rate schedule and best-iterate
//! tracking.

use std::time::Instant;

use crate::error::{Error, Result};

/// Relative learning rate below which a run counts as converged.
const CONVERGED_LR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps without a `rel_tol` improvement before the rate is cut.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr0: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            plateau_patience: 50,
            plateau_factor: 0.5,
            rel_tol: 1e-4,
            max_steps: 5000,
            time_limit: 600.0,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::InvalidConfig("lr0 must be > 0".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::InvalidConfig("plateau_factor must lie in (0, 1)".into()));
        }
        if !(self.time_limit > 0.0) {
            return Err(Error::InvalidConfig("time_limit must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxSteps,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub best_params: Vec<f64>,
    pub best_loss: f64,
    pub initial_loss: f64,
    pub steps_taken: usize,
    /// Learning rate in effect at each step.
    pub lr_trace: Vec<f64>,
    /// Best loss so far after each step.
    pub best_trace: Vec<f64>,
    pub stop_reason: StopReason,
}

/// A differentiable objective: loss and gradient at `params`.
pub trait Objective {
    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>);

    /// Loss only; defaults to discarding the gradient.
    fn loss(&self, params: &[f64]) -> f64 {
        self.eval(params).0
    }
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for F {
    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        self(params)
    }
}

fn checked_eval(objective: &impl Objective, params: &[f64], step: usize) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = objective.eval(params);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(step));
    }
    if grad.len() != params.len() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient(step));
    }
    Ok((loss, grad))
}

/// Minimizes `objective` from `init`. The returned parameters are the best
/// iterate seen, so the result's loss never exceeds the initial loss.
pub fn minimize(objective: &impl Objective, init: &[f64], cfg: &OptimConfig) -> Result<OptimResult> {
    minimize_with(objective, init, cfg, |_, _| {})
}

/// [`minimize`] with `on_step(step, params)` called after every update.
pub fn minimize_with(
    objective: &impl Objective,
    init: &[f64],
    cfg: &OptimConfig,
    mut on_step: impl FnMut(usize, &[f64]),
) -> Result<OptimResult> {
    cfg.validate()?;
    let start = Instant::now();
    let n = init.len();
    let mut params = init.to_vec();
    let (mut loss, mut grad) = checked_eval(objective, &params, 0)?;
    let initial_loss = loss;
    let mut best = (params.clone(), loss);
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut lr = cfg.lr0;
    let mut plateau_ref = loss;
    let mut since_improvement = 0;
    let mut lr_trace = Vec::new();
    let mut best_trace = Vec::new();
    let mut stop_reason = StopReason::MaxSteps;

    for step in 1..=cfg.max_steps {
        if start.elapsed().as_secs_f64() >= cfg.time_limit {
            stop_reason = StopReason::TimeLimit;
            break;
        }
        let b1t = 1.0 - cfg.beta1.powi(step as i32);
        let b2t = 1.0 - cfg.beta2.powi(step as i32);
        for k in 0..n {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            params[k] -= lr * (m[k] / b1t) / ((v[k] / b2t).sqrt() + cfg.eps);
        }
        lr_trace.push(lr);
        on_step(step, &params);
        (loss, grad) = checked_eval(objective, &params, step)?;
        if loss < best.1 {
            best = (params.clone(), loss);
        }
        best_trace.push(best.1);

        if loss < plateau_ref - cfg.rel_tol * plateau_ref.abs() {
            plateau_ref = loss;
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                since_improvement = 0;
                plateau_ref = plateau_ref.min(loss);
            }
        }
        if lr < CONVERGED_LR_RATIO * cfg.lr0 {
            stop_reason = StopReason::Converged;
            break;
        }
    }

    Ok(OptimResult {
        best_params: best.0,
        best_loss: best.1,
        initial_loss,
        steps_taken: lr_trace.len(),
        lr_trace,
        best_trace,
        stop_reason,
    })
}

/// Largest `|g_fd - g| / (|g| + 1e-8)` over coordinates, with `g_fd` the
/// central difference at step `h`.
pub fn check_gradient(objective: &impl Objective, params: &[f64], h: f64) -> f64 {
    let (_, grad) = objective.eval(params);
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..params.len() {
        x[k] = params[k] + h;
        let up = objective.loss(&x);
        x[k] = params[k] - h;
        let down = objective.loss(&x);
        x[k] = params[k];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / (grad[k].abs() + 1e-8));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{pinball, pinball_grad};
    use proptest::prelude::*;

    fn quadratic(x: &[f64]) -> (f64, Vec<f64>) {
        ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)])
    }

    #[test]
    fn finds_quadratic_minimum() {
        let r = minimize(&quadratic, &[0.0], &OptimConfig::default()).unwrap();
        assert!((r.best_params[0] - 3.0).abs() < 1e-3, "{:?}", r.best_params);
    }

    #[test]
    fn constant_objective_converges_by_plateau() {
        let r = minimize(
            &|x: &[f64]| (5.0, vec![0.0; x.len()]),
            &[1.0, 2.0],
            &OptimConfig::default(),
        )
        .unwrap();
        assert_eq!(r.best_loss, 5.0);
        assert_eq!(r.stop_reason, StopReason::Converged);
        assert_eq!(r.best_params, vec![1.0, 2.0]);
    }

    #[test]
    fn start_at_minimizer_is_kept() {
        let r = minimize(&quadratic, &[3.0], &OptimConfig::default()).unwrap();
        assert_eq!(r.best_params, vec![3.0]);
        assert_eq!(r.best_loss, 0.0);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let nan = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert_eq!(
            minimize(&nan, &[0.0], &OptimConfig::default()),
            Err(Error::NonFiniteLoss(0))
        );
        let blowup = |x: &[f64]| (x[0], vec![if x[0] < 0.0 { f64::INFINITY } else { 1.0 }]);
        assert_eq!(
            minimize(&blowup, &[0.01], &OptimConfig::default()),
            Err(Error::NonFiniteGradient(1))
        );
    }

    #[test]
    fn time_limit_stops_early() {
        let cfg = OptimConfig {
            time_limit: 1e-9,
            ..OptimConfig::default()
        };
        let r = minimize(&quadratic, &[0.0], &cfg).unwrap();
        assert_eq!(r.stop_reason, StopReason::TimeLimit);
    }

    #[test]
    fn gradient_check_catches_errors() {
        assert!(check_gradient(&quadratic, &[0.7], 1e-5) < 1e-6);
        let wrong = |x: &[f64]| ((x[0] - 3.0).powi(2), vec![4.0 * (x[0] - 3.0)]);
        assert!((check_gradient(&wrong, &[0.7], 1e-5) - 0.5).abs() < 1e-3);
    }

    #[test]
    fn pinball_objective_gradient() {
        // Residuals stay at least 1e-3 away from the kink.
        let ys = [1.0, -0.5, 2.0];
        let obj = |x: &[f64]| {
            let mut loss = 0.0;
            let mut g = vec![0.0; 2];
            for (t, y) in ys.iter().enumerate() {
                let yhat = x[0] + x[1] * t as f64;
                loss += pinball(yhat, *y, 0.3);
                let d = pinball_grad(yhat, *y, 0.3);
                g[0] += d;
                g[1] += d * t as f64;
            }
            (loss, g)
        };
        assert!(check_gradient(&obj, &[0.2, 0.1], 1e-5) < 1e-4);
    }

    proptest! {
        #[test]
        fn best_trace_is_monotone_and_deterministic(a in -5.0f64..5.0, c in 0.1f64..4.0, x0 in -10.0f64..10.0) {
            let obj = move |x: &[f64]| (c * (x[0] - a).abs() + (x[0] - a).powi(2), vec![c * (x[0] - a).signum() + 2.0 * (x[0] - a)]);
            let cfg = OptimConfig { max_steps: 300, ..OptimConfig::default() };
            let r1 = minimize(&obj, &[x0], &cfg).unwrap();
            let r2 = minimize(&obj, &[x0], &cfg).unwrap();
            prop_assert_eq!(&r1, &r2);
            prop_assert!(r1.best_loss <= r1.initial_loss);
            prop_assert!(r1.best_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
