//! Linear stackers with tied weights, and the weight tensor shared with the
//! performance-weighted and greedy combiners.

use std::fmt;
use std::str::FromStr;

use super::data::{FlatData, StackingData};
use crate::error::{Error, Result};
use crate::optim::{minimize, Objective, OptimConfig, OptimResult};

/// Which of item, horizon step and quantile get their own weights. The
/// `*qq` schemes mix every input quantile into every output quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tying {
    M,
    Mi,
    Mt,
    Mq,
    Mit,
    Miq,
    Mtq,
    Mitq,
    Mqq,
    Miqq,
    Mtqq,
}

impl Tying {
    pub const ALL: [Tying; 11] = [
        Tying::M,
        Tying::Mi,
        Tying::Mt,
        Tying::Mq,
        Tying::Mit,
        Tying::Miq,
        Tying::Mtq,
        Tying::Mitq,
        Tying::Mqq,
        Tying::Miqq,
        Tying::Mtqq,
    ];

    pub fn per_item(self) -> bool {
        matches!(self, Tying::Mi | Tying::Mit | Tying::Miq | Tying::Mitq | Tying::Miqq)
    }

    pub fn per_step(self) -> bool {
        matches!(self, Tying::Mt | Tying::Mit | Tying::Mtq | Tying::Mitq | Tying::Mtqq)
    }

    pub fn per_quantile(self) -> bool {
        !matches!(self, Tying::M | Tying::Mi | Tying::Mt | Tying::Mit)
    }

    pub fn across_quantiles(self) -> bool {
        matches!(self, Tying::Mqq | Tying::Miqq | Tying::Mtqq)
    }

    pub fn name(self) -> &'static str {
        match self {
            Tying::M => "m",
            Tying::Mi => "mi",
            Tying::Mt => "mt",
            Tying::Mq => "mq",
            Tying::Mit => "mit",
            Tying::Miq => "miq",
            Tying::Mtq => "mtq",
            Tying::Mitq => "mitq",
            Tying::Mqq => "mqq",
            Tying::Miqq => "miqq",
            Tying::Mtqq => "mtqq",
        }
    }
}

impl fmt::Display for Tying {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tying {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Tying::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown tying `{s}`")))
    }
}

/// How unconstrained parameters map to weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    /// Softmax over each weight slice: positive, summing to one.
    Softmax,
    /// Squared parameters: non-negative, no sum constraint.
    Positive,
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Param::Softmax => "softmax",
            Param::Positive => "positive",
        })
    }
}

impl FromStr for Param {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "softmax" => Ok(Param::Softmax),
            "positive" => Ok(Param::Positive),
            other => Err(Error::InvalidConfig(format!("unknown parameterization `{other}`"))),
        }
    }
}

/// Combination weights over `(item, step, quantile, input quantile, model)`
/// with tied axes collapsed to length one.
///
/// A slice is the block of weights applied to one output cell; it holds
/// `n_q2 * n_models` values laid out `[q2][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    pub tying: Tying,
    pub n_items: usize,
    pub n_steps: usize,
    pub n_quantiles: usize,
    pub n_input_quantiles: usize,
    pub n_models: usize,
    /// Item ids along the item axis, empty when items are tied.
    pub items: Vec<String>,
    pub values: Vec<f64>,
}

impl WeightTensor {
    /// Zero weights of the given layout.
    pub fn zeros(tying: Tying, items: &[String], horizon: usize, n_q: usize, n_models: usize) -> Self {
        let n_items = if tying.per_item() { items.len().max(1) } else { 1 };
        let n_steps = if tying.per_step() { horizon } else { 1 };
        let n_quantiles = if tying.per_quantile() { n_q } else { 1 };
        let n_input_quantiles = if tying.across_quantiles() { n_q } else { 1 };
        Self {
            tying,
            n_items,
            n_steps,
            n_quantiles,
            n_input_quantiles,
            n_models,
            items: if tying.per_item() { items.to_vec() } else { Vec::new() },
            values: vec![0.0; n_items * n_steps * n_quantiles * n_input_quantiles * n_models],
        }
    }

    /// Model-axis weights shared by every cell.
    pub fn per_model(weights: Vec<f64>) -> Self {
        let mut w = Self::zeros(Tying::M, &[], 1, 1, weights.len());
        w.values = weights;
        w
    }

    pub fn slice_len(&self) -> usize {
        self.n_input_quantiles * self.n_models
    }

    pub fn n_slices(&self) -> usize {
        self.n_items * self.n_steps * self.n_quantiles
    }

    /// Slice index for item axis position `i`, step `h` and quantile `q`;
    /// tied axes ignore their argument.
    #[inline]
    pub fn slice_index(&self, i: usize, h: usize, q: usize) -> usize {
        let i = if self.n_items > 1 { i } else { 0 };
        let h = if self.n_steps > 1 { h } else { 0 };
        let q = if self.n_quantiles > 1 { q } else { 0 };
        (i * self.n_steps + h) * self.n_quantiles + q
    }

    pub fn slice(&self, index: usize) -> &[f64] {
        let n = self.slice_len();
        &self.values[index * n..(index + 1) * n]
    }

    /// The weights an item would use: its own when it was trained, else the
    /// mean over trained items. Returns the per-item block of
    /// `n_steps * n_quantiles` slices.
    pub fn item_block(&self, item: &str) -> (Vec<f64>, bool) {
        let block = self.n_steps * self.n_quantiles * self.slice_len();
        if !self.tying.per_item() {
            return (self.values.clone(), false);
        }
        if let Some(i) = self.items.iter().position(|x| x == item) {
            return (self.values[i * block..(i + 1) * block].to_vec(), false);
        }
        let mut mean = vec![0.0; block];
        for chunk in self.values.chunks(block) {
            for (m, v) in mean.iter_mut().zip(chunk) {
                *m += v;
            }
        }
        let n = self.n_items as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        (mean, true)
    }

    /// Combines one item's inputs, laid out `[m][h][q]`, into an `H x Q`
    /// block using an item block from [`WeightTensor::item_block`].
    pub fn apply(&self, block: &[f64], inputs: &[f64], horizon: usize, n_q: usize) -> Vec<f64> {
        let sl = self.slice_len();
        let mut out = vec![0.0; horizon * n_q];
        for h in 0..horizon {
            for q in 0..n_q {
                let s = self.slice_index(0, h, q);
                let w = &block[s * sl..(s + 1) * sl];
                let mut acc = 0.0;
                for q2 in 0..self.n_input_quantiles {
                    let q_in = if self.n_input_quantiles > 1 { q2 } else { q };
                    for m in 0..self.n_models {
                        acc += w[q2 * self.n_models + m] * inputs[(m * horizon + h) * n_q + q_in];
                    }
                }
                out[h * n_q + q] = acc;
            }
        }
        out
    }

    /// Reorders the model axis by `order`, matching
    /// [`ModelForecastSet::permute_models`](crate::series::ModelForecastSet::permute_models).
    pub fn permute_models(&self, order: &[usize]) -> Self {
        let mut out = self.clone();
        let m = self.n_models;
        for (dst, src) in out.values.chunks_mut(m).zip(self.values.chunks(m)) {
            for (k, &o) in order.iter().enumerate() {
                dst[k] = src[o];
            }
        }
        out
    }
}

/// The mean OOF loss of a linear combination as a function of the
/// unconstrained parameters.
#[derive(Debug, Clone)]
pub struct LinearObjective {
    pub(crate) flat: FlatData,
    pub(crate) layout: WeightTensor,
    pub param: Param,
}

impl LinearObjective {
    pub fn new(data: &StackingData, tying: Tying, param: Param) -> Result<Self> {
        let flat = FlatData::new(data)?;
        let layout = WeightTensor::zeros(
            tying,
            &data.items(),
            data.task.horizon(),
            data.task.n_quantiles(),
            data.n_models(),
        );
        Ok(Self { flat, layout, param })
    }

    pub fn n_params(&self) -> usize {
        self.layout.values.len()
    }

    /// Maps parameters to weights slice by slice.
    pub fn weights(&self, raw: &[f64]) -> Vec<f64> {
        match self.param {
            Param::Positive => raw.iter().map(|r| r * r).collect(),
            Param::Softmax => {
                let mut out = vec![0.0; raw.len()];
                for (dst, src) in out
                    .chunks_mut(self.layout.slice_len())
                    .zip(raw.chunks(self.layout.slice_len()))
                {
                    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = (s - max).exp();
                        total += *d;
                    }
                    dst.iter_mut().for_each(|d| *d /= total);
                }
                out
            }
        }
    }

    /// Starting parameters: uniform weights over models, and for the
    /// across-quantile schemes nearly all mass on the matching quantile.
    pub fn init(&self) -> Vec<f64> {
        let w = &self.layout;
        let m = w.n_models as f64;
        let base = match self.param {
            Param::Positive => 1.0 / m.sqrt(),
            Param::Softmax => 0.0,
        };
        let mut raw = vec![base; w.values.len()];
        if w.tying.across_quantiles() {
            for s in 0..w.n_slices() {
                let q = s % w.n_quantiles;
                for q2 in 0..w.n_input_quantiles {
                    if q2 == q {
                        continue;
                    }
                    for mi in 0..w.n_models {
                        raw[s * w.slice_len() + q2 * w.n_models + mi] = match self.param {
                            Param::Positive => 1e-3,
                            Param::Softmax => -7.0,
                        };
                    }
                }
            }
        }
        raw
    }

    /// Plain model averaging expressed in this layout. Under softmax the
    /// off-diagonal quantile weights get a negligible positive mass.
    pub fn uniform_weights(&self) -> Vec<f64> {
        let w = &self.layout;
        let m = w.n_models as f64;
        if !w.tying.across_quantiles() {
            return vec![1.0 / m; w.values.len()];
        }
        let eps = match self.param {
            Param::Positive => 0.0,
            Param::Softmax => 1e-12,
        };
        let off = (w.n_input_quantiles - 1) as f64 * m * eps;
        let mut out = vec![eps; w.values.len()];
        for s in 0..w.n_slices() {
            let q = s % w.n_quantiles;
            for mi in 0..w.n_models {
                out[s * w.slice_len() + q * w.n_models + mi] = (1.0 - off) / m;
            }
        }
        out
    }

    /// Loss and the gradient with respect to the weights themselves.
    fn loss_and_weight_grad(&self, weights: &[f64], want_grad: bool) -> (f64, Vec<f64>) {
        let f = &self.flat;
        let w = &self.layout;
        let sl = w.slice_len();
        let nq = f.n_quantiles();
        let m = w.n_models;
        let mixed = w.n_input_quantiles > 1;
        let mut grad = if want_grad {
            vec![0.0; weights.len()]
        } else {
            Vec::new()
        };
        let mut loss = 0.0;
        for r in &f.records {
            for (h, &y) in r.target.iter().enumerate() {
                for &q in &f.scored {
                    let start = if mixed { h * nq * m } else { (h * nq + q) * m };
                    let x = &r.by_cell[start..start + sl];
                    let s = w.slice_index(r.item, h, q);
                    let ws = &weights[s * sl..(s + 1) * sl];
                    let c: f64 = ws.iter().zip(x).map(|(a, b)| a * b).sum();
                    let level = f.levels[q];
                    loss += r.weight * crate::losses::pinball(c, y, level);
                    if want_grad {
                        let g = r.weight * crate::losses::pinball_grad(c, y, level);
                        if g != 0.0 {
                            for (gk, xk) in grad[s * sl..(s + 1) * sl].iter_mut().zip(x) {
                                *gk += g * xk;
                            }
                        }
                    }
                }
            }
        }
        (loss, grad)
    }

    pub fn loss_of_weights(&self, weights: &[f64]) -> f64 {
        self.loss_and_weight_grad(weights, false).0
    }

    pub fn tensor(&self, weights: Vec<f64>) -> WeightTensor {
        let mut t = self.layout.clone();
        t.values = weights;
        t
    }
}

impl Objective for LinearObjective {
    fn eval(&self, raw: &[f64]) -> (f64, Vec<f64>) {
        let weights = self.weights(raw);
        let (loss, gw) = self.loss_and_weight_grad(&weights, true);
        let grad = match self.param {
            Param::Positive => raw.iter().zip(&gw).map(|(r, g)| 2.0 * r * g).collect(),
            Param::Softmax => {
                let sl = self.layout.slice_len();
                let mut out = vec![0.0; raw.len()];
                for ((o, w), g) in out.chunks_mut(sl).zip(weights.chunks(sl)).zip(gw.chunks(sl)) {
                    let dot: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
                    for k in 0..sl {
                        o[k] = w[k] * (g[k] - dot);
                    }
                }
                out
            }
        };
        (loss, grad)
    }

    fn loss(&self, raw: &[f64]) -> f64 {
        self.loss_of_weights(&self.weights(raw))
    }
}

/// Fitted linear weights with the optimizer summary.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub weights: WeightTensor,
    pub loss: f64,
    pub uniform_loss: f64,
    pub optim: OptimResult,
}

pub fn fit_linear(data: &StackingData, tying: Tying, param: Param, cfg: &OptimConfig) -> Result<LinearFit> {
    let objective = LinearObjective::new(data, tying, param)?;
    let result = minimize(&objective, &objective.init(), cfg)?;
    let uniform = objective.uniform_weights();
    let uniform_loss = objective.loss_of_weights(&uniform);
    let (weights, loss) = if result.best_loss <= uniform_loss {
        (objective.weights(&result.best_params), result.best_loss)
    } else {
        (uniform, uniform_loss)
    };
    Ok(LinearFit {
        weights: objective.tensor(weights),
        loss,
        uniform_loss,
        optim: result,
    })
}
