//! The tabular stacker: one row per `(window, item, step)` with every
//! model's quantiles as features, fed to a small multi-quantile network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::data::StackingData;
use crate::error::{Error, Result};
use crate::losses::{pinball, pinball_grad};
use crate::optim::{minimize, minimize_with, Objective, OptimConfig};

/// Floor on the row standard deviation in the scaled wrapper.
pub const SCALE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularRow {
    pub window: usize,
    pub item: String,
    pub h: usize,
    /// Base forecasts ordered model-major, quantile-minor.
    pub features: Vec<f64>,
    pub target: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularRowSet {
    pub n_features: usize,
    pub rows: Vec<TabularRow>,
}

/// Features of step `h` for one item's `[m][h][q]` inputs.
pub(crate) fn row_features(inputs: &[f64], n_models: usize, horizon: usize, n_q: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_models * n_q);
    for m in 0..n_models {
        let start = (m * horizon + h) * n_q;
        out.extend_from_slice(&inputs[start..start + n_q]);
    }
    out
}

/// Rows ordered by window, then item, then step.
pub fn build_tabular_rows(data: &StackingData) -> TabularRowSet {
    let (horizon, n_q, n_models) = (data.task.horizon(), data.task.n_quantiles(), data.n_models());
    let mut rows = Vec::new();
    for (k, w) in data.windows.iter().enumerate() {
        for (i, item) in w.forecasts.item_ids().iter().enumerate() {
            let inputs = w.forecasts.item_inputs(i);
            for h in 0..horizon {
                rows.push(TabularRow {
                    window: k,
                    item: item.clone(),
                    h,
                    features: row_features(&inputs, n_models, horizon, n_q, h),
                    target: w.targets[i][h],
                    scale: w.scales[i],
                });
            }
        }
    }
    TabularRowSet {
        n_features: n_models * n_q,
        rows,
    }
}

/// A map from one row's features to one value per quantile level.
pub trait TabularRegressor {
    fn n_outputs(&self) -> usize;
    fn predict(&self, features: &[f64]) -> Vec<f64>;
}

/// Returns the first `n_outputs` features unchanged.
#[derive(Debug, Clone, Copy)]
pub struct IdentityRegressor {
    pub n_outputs: usize,
}

impl TabularRegressor for IdentityRegressor {
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn predict(&self, features: &[f64]) -> Vec<f64> {
        features[..self.n_outputs].to_vec()
    }
}

/// Per-row affine map `x -> alpha x + beta` that standardizes the features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowScaling {
    pub alpha: f64,
    pub beta: f64,
}

impl RowScaling {
    pub fn of(features: &[f64]) -> Self {
        let n = features.len() as f64;
        let mean = features.iter().sum::<f64>() / n;
        let var = features.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let alpha = 1.0 / var.sqrt().max(SCALE_EPS);
        Self {
            alpha,
            beta: -mean * alpha,
        }
    }

    pub fn forward(&self, features: &[f64]) -> Vec<f64> {
        features.iter().map(|x| self.alpha * x + self.beta).collect()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.beta) / self.alpha
    }
}

/// Runs the inner regressor on standardized features and maps outputs back
/// with `g'(x) = (g(alpha x + beta) - beta) / alpha`.
#[derive(Debug, Clone)]
pub struct Scaled<R> {
    pub inner: R,
}

impl<R: TabularRegressor> TabularRegressor for Scaled<R> {
    fn n_outputs(&self) -> usize {
        self.inner.n_outputs()
    }

    fn predict(&self, features: &[f64]) -> Vec<f64> {
        let s = RowScaling::of(features);
        self.inner
            .predict(&s.forward(features))
            .into_iter()
            .map(|y| s.inverse(y))
            .collect()
    }
}

/// One hidden tanh layer with an optional linear skip from inputs to
/// outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub n_inputs: usize,
    pub hidden: usize,
    pub n_outputs: usize,
    pub skip: bool,
    /// `w1 [hidden x in], b1, w2 [out x hidden], b2, skip [out x in]`.
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn n_params(n_inputs: usize, hidden: usize, n_outputs: usize, skip: bool) -> usize {
        hidden * n_inputs + hidden + n_outputs * hidden + n_outputs + if skip { n_outputs * n_inputs } else { 0 }
    }

    /// Random hidden layer, zero output layer and skip: the initial network
    /// predicts zero everywhere.
    pub fn init(n_inputs: usize, hidden: usize, n_outputs: usize, skip: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (n_inputs as f64).sqrt()).expect("valid deviation");
        let mut params = vec![0.0; Self::n_params(n_inputs, hidden, n_outputs, skip)];
        for p in &mut params[..hidden * n_inputs] {
            *p = normal.sample(&mut rng);
        }
        Self {
            n_inputs,
            hidden,
            n_outputs,
            skip,
            params,
        }
    }

    fn offsets(&self) -> [usize; 4] {
        let b1 = self.hidden * self.n_inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.n_outputs * self.hidden;
        let sk = b2 + self.n_outputs;
        [b1, w2, b2, sk]
    }

    /// Hidden activations and outputs under `params`.
    fn forward_with(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let [b1, w2, b2, sk] = self.offsets();
        let n_in = self.n_inputs;
        let act: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &params[j * n_in..(j + 1) * n_in];
                (params[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        let out = (0..self.n_outputs)
            .map(|o| {
                let row = &params[w2 + o * self.hidden..w2 + (o + 1) * self.hidden];
                let mut y = params[b2 + o] + row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
                if self.skip {
                    let srow = &params[sk + o * n_in..sk + (o + 1) * n_in];
                    y += srow.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                }
                y
            })
            .collect();
        (act, out)
    }

    /// Accumulates the parameter gradient for output gradient `dout`.
    fn backward_into(&self, params: &[f64], x: &[f64], act: &[f64], dout: &[f64], grad: &mut [f64]) {
        let [b1, w2, b2, sk] = self.offsets();
        let n_in = self.n_inputs;
        let mut dact = vec![0.0; self.hidden];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[b2 + o] += d;
            for j in 0..self.hidden {
                grad[w2 + o * self.hidden + j] += d * act[j];
                dact[j] += d * params[w2 + o * self.hidden + j];
            }
            if self.skip {
                for (k, v) in x.iter().enumerate() {
                    grad[sk + o * n_in + k] += d * v;
                }
            }
        }
        for j in 0..self.hidden {
            let dz = dact[j] * (1.0 - act[j] * act[j]);
            if dz == 0.0 {
                continue;
            }
            grad[b1 + j] += dz;
            for (k, v) in x.iter().enumerate() {
                grad[j * n_in + k] += dz * v;
            }
        }
    }
}

impl TabularRegressor for Mlp {
    fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    fn predict(&self, features: &[f64]) -> Vec<f64> {
        self.forward_with(&self.params, features).1
    }
}

/// Network shape, scaling and training budget of a tabular stacker.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularConfig {
    pub hidden: usize,
    pub skip: bool,
    pub scaled: bool,
    /// Pick the step count on the last window before fitting on all of them.
    pub early_stopping: bool,
    pub optim: OptimConfig,
}

impl TabularConfig {
    pub const DEFAULT_MAX_STEPS: usize = 1000;

    pub fn new(hidden: usize, skip: bool, scaled: bool) -> Self {
        Self {
            hidden,
            skip,
            scaled,
            early_stopping: true,
            optim: OptimConfig {
                max_steps: Self::DEFAULT_MAX_STEPS,
                ..OptimConfig::default()
            },
        }
    }
}

/// A fitted tabular stacker.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub net: Mlp,
    pub scaled: bool,
}

impl TabularModel {
    pub fn predict_row(&self, features: &[f64]) -> Vec<f64> {
        if self.scaled {
            Scaled { inner: &self.net }.predict(features)
        } else {
            self.net.predict(features)
        }
    }
}

impl<R: TabularRegressor> TabularRegressor for &R {
    fn n_outputs(&self) -> usize {
        (**self).n_outputs()
    }

    fn predict(&self, features: &[f64]) -> Vec<f64> {
        (**self).predict(features)
    }
}

/// Mean over training rows of `mean_q pinball / a`, as a function of the
/// network parameters.
pub struct TabularObjective {
    net: Mlp,
    levels: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    scaling: Vec<Option<RowScaling>>,
    targets: Vec<f64>,
    weights: Vec<f64>,
}

impl TabularObjective {
    pub fn new(rows: &TabularRowSet, levels: &[f64], net: Mlp, scaled: bool) -> Result<Self> {
        let train: Vec<&TabularRow> = rows.rows.iter().filter(|r| r.scale > 0.0).collect();
        if train.is_empty() {
            return Err(Error::AllItemsExcluded);
        }
        let denom = (train.len() * levels.len()) as f64;
        let scaling: Vec<Option<RowScaling>> = train
            .iter()
            .map(|r| scaled.then(|| RowScaling::of(&r.features)))
            .collect();
        Ok(Self {
            inputs: train
                .iter()
                .zip(&scaling)
                .map(|(r, s)| s.map_or_else(|| r.features.clone(), |s| s.forward(&r.features)))
                .collect(),
            targets: train.iter().map(|r| r.target).collect(),
            weights: train.iter().map(|r| 1.0 / (denom * r.scale)).collect(),
            scaling,
            levels: levels.to_vec(),
            net,
        })
    }

    pub fn init(&self) -> Vec<f64> {
        self.net.params.clone()
    }
}

impl Objective for TabularObjective {
    fn eval(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        let mut dout = vec![0.0; self.levels.len()];
        for (((x, s), &y), &w) in self
            .inputs
            .iter()
            .zip(&self.scaling)
            .zip(&self.targets)
            .zip(&self.weights)
        {
            let (act, out) = self.net.forward_with(params, x);
            let inv_alpha = s.map_or(1.0, |s| 1.0 / s.alpha);
            for (q, (&level, &o)) in self.levels.iter().zip(&out).enumerate() {
                let pred = s.map_or(o, |s| s.inverse(o));
                loss += w * pinball(pred, y, level);
                dout[q] = w * pinball_grad(pred, y, level) * inv_alpha;
            }
            self.net.backward_into(params, x, &act, &dout, &mut grad);
        }
        (loss, grad)
    }

    fn loss(&self, params: &[f64]) -> f64 {
        let mut loss = 0.0;
        for (((x, s), &y), &w) in self
            .inputs
            .iter()
            .zip(&self.scaling)
            .zip(&self.targets)
            .zip(&self.weights)
        {
            let (_, out) = self.net.forward_with(params, x);
            for (&level, &o) in self.levels.iter().zip(&out) {
                loss += w * pinball(s.map_or(o, |s| s.inverse(o)), y, level);
            }
        }
        loss
    }
}

#[derive(Debug, Clone)]
pub struct TabularFit {
    pub model: TabularModel,
    pub initial_loss: f64,
    pub loss: f64,
}

/// Step count minimizing the loss on the last window when training on the
/// others, or `None` when there is no usable split.
fn early_stopping_steps(rows: &TabularRowSet, levels: &[f64], net: &Mlp, cfg: &TabularConfig) -> Result<Option<usize>> {
    let last = match rows.rows.iter().map(|r| r.window).max() {
        Some(k) if k > 0 => k,
        _ => return Ok(None),
    };
    let part = |keep: fn(usize, usize) -> bool| TabularRowSet {
        n_features: rows.n_features,
        rows: rows.rows.iter().filter(|r| keep(r.window, last)).cloned().collect(),
    };
    let (train, val) = (part(|w, k| w < k), part(|w, k| w == k));
    let (train, val) = match (
        TabularObjective::new(&train, levels, net.clone(), cfg.scaled),
        TabularObjective::new(&val, levels, net.clone(), cfg.scaled),
    ) {
        (Ok(t), Ok(v)) => (t, v),
        (Err(Error::AllItemsExcluded), _) | (_, Err(Error::AllItemsExcluded)) => return Ok(None),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let init = train.init();
    let mut best = (val.loss(&init), 0);
    minimize_with(&train, &init, &cfg.optim, |step, params| {
        let l = val.loss(params);
        if l < best.0 {
            best = (l, step);
        }
    })?;
    Ok(Some(best.1))
}

pub fn fit_tabular(data: &StackingData, cfg: &TabularConfig) -> Result<TabularFit> {
    let rows = build_tabular_rows(data);
    let n_q = data.task.n_quantiles();
    let levels = data.task.quantiles();
    let net = Mlp::init(rows.n_features, cfg.hidden, n_q, cfg.skip, cfg.optim.seed);
    let mut optim = cfg.optim.clone();
    if cfg.early_stopping {
        if let Some(steps) = early_stopping_steps(&rows, levels, &net, cfg)? {
            optim.max_steps = steps;
        }
    }
    let objective = TabularObjective::new(&rows, levels, net.clone(), cfg.scaled)?;
    let result = minimize(&objective, &objective.init(), &optim)?;
    Ok(TabularFit {
        model: TabularModel {
            net: Mlp {
                params: result.best_params,
                ..net
            },
            scaled: cfg.scaled,
        },
        initial_loss: result.initial_loss,
        loss: result.best_loss,
    })
}
