//! Combiners that map `M` base forecasts to one forecast: averages, model
//! selection, performance weights, greedy selection, tied linear stackers
//! and the tabular network.

mod data;
mod greedy;
mod linear;
mod perf;
mod simple;
mod tabular;

use std::fmt;
use std::str::FromStr;

pub use data::{StackWindow, StackingData};
pub use greedy::{fit_greedy, GreedyFit};
pub use linear::{fit_linear, LinearFit, LinearObjective, Param, Tying, WeightTensor};
pub use perf::{fit_performance_weights, weights_from_losses, HKind, PerfWeights, EXP_INPUT_CAP};
pub use simple::select_best;
pub use tabular::{
    build_tabular_rows, fit_tabular, IdentityRegressor, Mlp, RowScaling, Scaled, TabularConfig, TabularFit,
    TabularModel, TabularObjective, TabularRegressor, TabularRow, TabularRowSet, SCALE_EPS,
};

use crate::error::{Error, Result};
use crate::optim::OptimConfig;
use crate::series::{enforce_quantile_monotonicity, ModelForecastSet, QuantileForecast};
use crate::timing::Timing;

/// Network flavour of a tabular stacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TabularKind {
    /// 16 hidden units and a linear skip from inputs to outputs.
    Tabular,
    /// 32 hidden units, no skip.
    Mlp,
}

impl TabularKind {
    pub fn config(self, scaled: bool) -> TabularConfig {
        match self {
            TabularKind::Tabular => TabularConfig::new(16, true, scaled),
            TabularKind::Mlp => TabularConfig::new(32, false, scaled),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StackerSpec {
    Mean,
    Median,
    SelectBest,
    PerfWeighted(HKind),
    Greedy(usize),
    Linear { tying: Tying, param: Param },
    Tabular { kind: TabularKind, scaled: bool },
}

impl StackerSpec {
    pub fn linear(tying: Tying, param: Param) -> Self {
        StackerSpec::Linear { tying, param }
    }

    pub fn validate(&self) -> Result<()> {
        if let StackerSpec::Greedy(0) = self {
            return Err(Error::InvalidConfig("Greedy needs S >= 1".into()));
        }
        Ok(())
    }

    /// Whether fitting involves no optimization at all.
    pub fn is_untrained(&self) -> bool {
        matches!(self, StackerSpec::Mean | StackerSpec::Median)
    }
}

impl fmt::Display for StackerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StackerSpec::Mean => f.write_str("Mean"),
            StackerSpec::Median => f.write_str("Median"),
            StackerSpec::SelectBest => f.write_str("SelectBest"),
            StackerSpec::PerfWeighted(h) => write!(f, "PerfWeighted({h})"),
            StackerSpec::Greedy(s) => write!(f, "Greedy({s})"),
            StackerSpec::Linear { tying, param } => write!(f, "Linear({tying},{param})"),
            StackerSpec::Tabular { kind, scaled } => {
                let base = match kind {
                    TabularKind::Tabular => "Tabular",
                    TabularKind::Mlp => "MLP",
                };
                if *scaled {
                    write!(f, "{base}(scaled)")
                } else {
                    f.write_str(base)
                }
            }
        }
    }
}

impl FromStr for StackerSpec {
    type Err = Error;

    /// Parses the names produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("unknown stacker `{s}`"));
        let (head, args) = match s.split_once('(') {
            Some((head, rest)) => (head.trim(), Some(rest.strip_suffix(')').ok_or_else(bad)?.trim())),
            None => (s, None),
        };
        let spec = match (head.to_ascii_lowercase().as_str(), args) {
            ("mean", None) => StackerSpec::Mean,
            ("median", None) => StackerSpec::Median,
            ("selectbest", None) => StackerSpec::SelectBest,
            ("perfweighted", Some(h)) => StackerSpec::PerfWeighted(h.parse()?),
            ("greedy", Some(n)) => StackerSpec::Greedy(n.parse().map_err(|_| bad())?),
            ("linear", Some(args)) => {
                let (t, p) = args.split_once(',').ok_or_else(bad)?;
                StackerSpec::Linear {
                    tying: t.parse()?,
                    param: p.parse()?,
                }
            }
            ("tabular" | "mlp", scaled) => StackerSpec::Tabular {
                kind: if head.eq_ignore_ascii_case("mlp") {
                    TabularKind::Mlp
                } else {
                    TabularKind::Tabular
                },
                scaled: match scaled {
                    None => false,
                    Some(a) if a.eq_ignore_ascii_case("scaled") => true,
                    Some(_) => return Err(bad()),
                },
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// What a fitted stacker keeps.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    None,
    Choice(usize),
    Weights(WeightTensor),
    Tabular(TabularModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedStacker {
    pub spec: StackerSpec,
    pub model_ids: Vec<String>,
    pub horizon: usize,
    pub n_quantiles: usize,
    pub payload: Payload,
    /// OOF training loss of the fitted combination.
    pub train_loss: f64,
    pub fit_seconds: f64,
    /// Set for performance weights that collapsed onto zero-loss models.
    pub degenerate: bool,
}

/// Settings shared by every stacker fit.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub optim: OptimConfig,
    /// Replaces the training budget of tabular stackers when set.
    pub tabular_max_steps: Option<usize>,
    pub timing: Timing,
}

fn fit_payload(spec: &StackerSpec, data: &StackingData, opts: &FitOptions) -> Result<(Payload, bool)> {
    Ok(match *spec {
        StackerSpec::Mean | StackerSpec::Median => (Payload::None, false),
        StackerSpec::SelectBest => (Payload::Choice(select_best(data)?.0), false),
        StackerSpec::PerfWeighted(kind) => {
            let w = fit_performance_weights(data, kind)?;
            (Payload::Weights(WeightTensor::per_model(w.weights)), w.degenerate)
        }
        StackerSpec::Greedy(s) => (
            Payload::Weights(WeightTensor::per_model(fit_greedy(data, s)?.weights)),
            false,
        ),
        StackerSpec::Linear { tying, param } => (
            Payload::Weights(fit_linear(data, tying, param, &opts.optim)?.weights),
            false,
        ),
        StackerSpec::Tabular { kind, scaled } => {
            let mut cfg = kind.config(scaled);
            cfg.optim = OptimConfig {
                max_steps: opts.tabular_max_steps.unwrap_or(cfg.optim.max_steps),
                ..opts.optim.clone()
            };
            (Payload::Tabular(fit_tabular(data, &cfg)?.model), false)
        }
    })
}

/// Fits one stacker on a training set.
pub fn fit_stacker(spec: &StackerSpec, data: &StackingData, opts: &FitOptions) -> Result<TrainedStacker> {
    spec.validate()?;
    let (payload, seconds) = opts.timing.measure(|| fit_payload(spec, data, opts));
    let (payload, degenerate) = payload?;
    let mut trained = TrainedStacker {
        spec: *spec,
        model_ids: data.model_ids.clone(),
        horizon: data.task.horizon(),
        n_quantiles: data.task.n_quantiles(),
        payload,
        train_loss: f64::NAN,
        fit_seconds: seconds,
        degenerate,
    };
    trained.train_loss = data.evaluate(&trained.combine_windows(data)?)?.value;
    Ok(trained)
}

/// Output of [`TrainedStacker::combine_with_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct Combined {
    pub forecasts: Vec<QuantileForecast>,
    /// Items not seen in training that used the mean of the trained items'
    /// weights.
    pub unseen_items: Vec<String>,
}

impl TrainedStacker {
    pub fn name(&self) -> String {
        self.spec.to_string()
    }

    /// Combined forecasts of every item in `inputs`.
    pub fn combine(&self, inputs: &ModelForecastSet) -> Result<Vec<QuantileForecast>> {
        self.combine_with_report(inputs).map(|c| c.forecasts)
    }

    pub fn combine_with_report(&self, inputs: &ModelForecastSet) -> Result<Combined> {
        let m = self.model_ids.len();
        if inputs.n_models() != m {
            return Err(Error::ShapeMismatch(format!(
                "stacker `{}` was trained on {m} models, got {}",
                self.name(),
                inputs.n_models()
            )));
        }
        if let Some(shape) = inputs.shape() {
            if shape != (self.horizon, self.n_quantiles) {
                return Err(Error::ShapeMismatch(format!(
                    "stacker `{}` was trained on {}x{} forecasts, got {}x{}",
                    self.name(),
                    self.horizon,
                    self.n_quantiles,
                    shape.0,
                    shape.1
                )));
            }
        }
        let (h, nq) = (self.horizon, self.n_quantiles);
        let mut unseen_items = Vec::new();
        let mut forecasts = Vec::with_capacity(inputs.n_items());
        for (i, item) in inputs.item_ids().iter().enumerate() {
            let x = inputs.item_inputs(i);
            let values = match &self.payload {
                Payload::None => match self.spec {
                    StackerSpec::Median => simple::median_combine(&x, m),
                    _ => simple::mean_combine(&x, m),
                },
                Payload::Choice(k) => inputs.forecast(*k, i).values().to_vec(),
                Payload::Weights(w) => {
                    let (block, unseen) = w.item_block(item);
                    if unseen {
                        unseen_items.push(item.clone());
                    }
                    w.apply(&block, &x, h, nq)
                }
                Payload::Tabular(model) => (0..h)
                    .flat_map(|step| model.predict_row(&tabular::row_features(&x, m, h, nq, step)))
                    .collect(),
            };
            let origin = inputs.forecast(0, i).origin_t;
            let f = QuantileForecast::new(item.clone(), origin, h, nq, values)?;
            forecasts.push(enforce_quantile_monotonicity(f));
        }
        Ok(Combined {
            forecasts,
            unseen_items,
        })
    }

    /// Combined forecasts for every window of a training set.
    pub fn combine_windows(&self, data: &StackingData) -> Result<Vec<Vec<QuantileForecast>>> {
        data.windows.iter().map(|w| self.combine(&w.forecasts)).collect()
    }

    /// Model-axis weights, when the payload reduces to one weight per model.
    pub fn model_weights(&self) -> Option<Vec<f64>> {
        let m = self.model_ids.len();
        match &self.payload {
            Payload::Choice(k) => Some((0..m).map(|j| if j == *k { 1.0 } else { 0.0 }).collect()),
            Payload::Weights(w) if w.tying == Tying::M => Some(w.values.clone()),
            Payload::None if self.spec == StackerSpec::Mean => Some(vec![1.0 / m as f64; m]),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests;
