//! Stacker training sets and the flattened view used by the fitters.

use crate::cv::{OofStore, WindowRecord};
use crate::error::{Error, Result};
use crate::losses::DatasetLoss;
use crate::series::{EvalLoss, ForecastTask, ModelForecastSet, QuantileForecast};

/// One window of base forecasts with the matching truth.
#[derive(Debug, Clone, PartialEq)]
pub struct StackWindow {
    pub forecasts: ModelForecastSet,
    pub targets: Vec<Vec<f64>>,
    pub scales: Vec<f64>,
}

impl StackWindow {
    pub fn new(forecasts: ModelForecastSet, targets: Vec<Vec<f64>>, scales: Vec<f64>) -> Result<Self> {
        if targets.len() != forecasts.n_items() || scales.len() != forecasts.n_items() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets and {} scales for {} items",
                targets.len(),
                scales.len(),
                forecasts.n_items()
            )));
        }
        Ok(Self {
            forecasts,
            targets,
            scales,
        })
    }

    fn from_record(w: &WindowRecord) -> Result<Self> {
        Self::new(w.forecasts.clone(), w.targets.clone(), w.scales.clone())
    }
}

/// Everything a stacker is trained on: per-window model forecasts, targets
/// and item scales.
#[derive(Debug, Clone, PartialEq)]
pub struct StackingData {
    pub task: ForecastTask,
    pub model_ids: Vec<String>,
    pub windows: Vec<StackWindow>,
}

impl StackingData {
    pub fn new(task: ForecastTask, model_ids: Vec<String>, windows: Vec<StackWindow>) -> Result<Self> {
        if model_ids.is_empty() {
            return Err(Error::InvalidConfig("a stacker needs at least one model".into()));
        }
        for w in &windows {
            if w.forecasts.model_ids() != model_ids.as_slice() {
                return Err(Error::ShapeMismatch("windows disagree on the model order".into()));
            }
            if let Some(shape) = w.forecasts.shape() {
                if shape != (task.horizon(), task.n_quantiles()) {
                    return Err(Error::ShapeMismatch(format!(
                        "window forecasts are {}x{}, task is {}x{}",
                        shape.0,
                        shape.1,
                        task.horizon(),
                        task.n_quantiles()
                    )));
                }
            }
            if w.targets.iter().any(|t| t.len() != task.horizon()) {
                return Err(Error::ShapeMismatch("target length differs from the horizon".into()));
            }
        }
        Ok(Self {
            task,
            model_ids,
            windows,
        })
    }

    /// All validation windows of a store.
    pub fn from_store(store: &OofStore) -> Result<Self> {
        let folds: Vec<usize> = (1..=store.windows.len()).collect();
        Self::from_store_folds(store, &folds)
    }

    /// The listed (1-based) folds of a store.
    pub fn from_store_folds(store: &OofStore, folds: &[usize]) -> Result<Self> {
        let windows = folds
            .iter()
            .map(|&k| {
                store
                    .window(k)
                    .ok_or_else(|| Error::InvalidConfig(format!("store has no fold {k}")))
                    .and_then(StackWindow::from_record)
            })
            .collect::<Result<_>>()?;
        Self::new(store.meta.task.clone(), store.meta.model_ids.clone(), windows)
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_records(&self) -> usize {
        self.windows.iter().map(|w| w.forecasts.n_items()).sum()
    }

    /// Item ids in order of first appearance.
    pub fn items(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for w in &self.windows {
            for id in w.forecasts.item_ids() {
                if !out.contains(id) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Loss of per-window combined forecasts, averaged over scored
    /// `(window, item)` records. Uses the same arithmetic as the fitters,
    /// so a passthrough combination reproduces the model's loss exactly.
    pub fn evaluate(&self, combined: &[Vec<QuantileForecast>]) -> Result<DatasetLoss> {
        if combined.len() != self.windows.len()
            || combined
                .iter()
                .zip(&self.windows)
                .any(|(c, w)| c.len() != w.forecasts.n_items())
        {
            return Err(Error::ShapeMismatch("one forecast per window item is required".into()));
        }
        let flat = FlatData::new(self)?;
        let blocks: Vec<Vec<f64>> = combined
            .iter()
            .zip(&self.windows)
            .flat_map(|(c, w)| {
                c.iter()
                    .zip(&w.scales)
                    .filter(|(_, &a)| a != 0.0)
                    .map(|(f, _)| f.values().to_vec())
            })
            .collect();
        let n_scored = blocks.len();
        Ok(DatasetLoss {
            value: flat.loss(&blocks),
            n_scored,
            n_excluded: self.n_records() - n_scored,
        })
    }

    /// Per-model loss over all records.
    pub fn model_losses(&self) -> Result<Vec<f64>> {
        let flat = FlatData::new(self)?;
        Ok((0..self.n_models()).map(|m| flat.model_loss(m)).collect())
    }
}

/// One scored `(window, item)` record.
#[derive(Debug, Clone)]
pub(crate) struct FlatRecord {
    /// Index into [`StackingData::items`].
    pub item: usize,
    /// `1 / (records * H * scored levels * a)`.
    pub weight: f64,
    pub target: Vec<f64>,
    /// Base forecasts laid out `[m][h][q]`.
    pub inputs: Vec<f64>,
    /// The same forecasts laid out `[h][q][m]`.
    pub by_cell: Vec<f64>,
}

/// Records with a zero scale dropped and every loss coefficient folded in.
#[derive(Debug, Clone)]
pub(crate) struct FlatData {
    pub n_models: usize,
    pub horizon: usize,
    pub levels: Vec<f64>,
    /// Quantile columns that enter the loss.
    pub scored: Vec<usize>,
    pub records: Vec<FlatRecord>,
}

impl FlatData {
    pub fn new(data: &StackingData) -> Result<Self> {
        let task = &data.task;
        let scored: Vec<usize> = match task.eval_loss() {
            EvalLoss::Sql => (0..task.n_quantiles()).collect(),
            EvalLoss::Mase => vec![task
                .median_index()
                .ok_or_else(|| Error::InvalidTask("MASE requires the 0.5 level".into()))?],
        };
        let items = data.items();
        let mut records = Vec::new();
        for w in &data.windows {
            for (i, id) in w.forecasts.item_ids().iter().enumerate() {
                let a = w.scales[i];
                if a == 0.0 {
                    continue;
                }
                let inputs = w.forecasts.item_inputs(i);
                let cells = task.horizon() * task.n_quantiles();
                let m = data.n_models();
                let by_cell = (0..cells * m).map(|k| inputs[(k % m) * cells + k / m]).collect();
                records.push(FlatRecord {
                    item: items.iter().position(|x| x == id).expect("item listed"),
                    weight: a,
                    target: w.targets[i].clone(),
                    inputs,
                    by_cell,
                });
            }
        }
        if records.is_empty() {
            return Err(Error::AllItemsExcluded);
        }
        let denom = (records.len() * task.horizon() * scored.len()) as f64;
        for r in &mut records {
            r.weight = 1.0 / (denom * r.weight);
        }
        Ok(Self {
            n_models: data.n_models(),
            horizon: task.horizon(),
            levels: task.quantiles().to_vec(),
            scored,
            records,
        })
    }

    pub fn n_quantiles(&self) -> usize {
        self.levels.len()
    }

    /// Loss of combined values, one `H x Q` block per record.
    pub fn loss(&self, combined: &[Vec<f64>]) -> f64 {
        let nq = self.n_quantiles();
        self.records
            .iter()
            .zip(combined)
            .map(|(r, c)| {
                let mut total = 0.0;
                for (h, &y) in r.target.iter().enumerate() {
                    for &q in &self.scored {
                        total += crate::losses::pinball(c[h * nq + q], y, self.levels[q]);
                    }
                }
                total * r.weight
            })
            .sum()
    }

    pub fn model_loss(&self, m: usize) -> f64 {
        let block = self.horizon * self.n_quantiles();
        let combined: Vec<Vec<f64>> = self
            .records
            .iter()
            .map(|r| r.inputs[m * block..(m + 1) * block].to_vec())
            .collect();
        self.loss(&combined)
    }
}
