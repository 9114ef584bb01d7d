//! Multi-layer stack ensembles: a portfolio of L2 stackers combined by an
//! L3 aggregator, trained with two-level cross-validation.
//!
//! With `K` validation windows, the L2 stackers are first fitted on windows
//! `1..K-1` and predict window `K`; the L3 aggregator is fitted on those
//! predictions. The L2 stackers are then refitted on all `K` windows unless
//! retraining is switched off.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::baselearners::BaseLearnerSpec;
use crate::cv::{fold_window, run_backtest, Backtest, BacktestOptions, OofStore};
use crate::error::{Error, Result};
use crate::io::FoldId;
use crate::series::{enforce_quantile_monotonicity, ForecastTask, ModelForecastSet, QuantileForecast, TimeSeriesPanel};
use crate::stackers::{
    fit_stacker, FitOptions, Param, StackWindow, StackerSpec, StackingData, TabularKind, TrainedStacker, Tying,
};

/// The aggregator on top of the L2 stackers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum L3Kind {
    SelectBest,
    Greedy(usize),
}

impl L3Kind {
    pub const DEFAULT_GREEDY: L3Kind = L3Kind::Greedy(100);

    pub fn spec(self) -> StackerSpec {
        match self {
            L3Kind::SelectBest => StackerSpec::SelectBest,
            L3Kind::Greedy(s) => StackerSpec::Greedy(s),
        }
    }

    /// Display name of the resulting ensemble.
    pub fn method_name(self) -> &'static str {
        match self {
            L3Kind::SelectBest => "StackerSelection",
            L3Kind::Greedy(_) => "MultiLayer",
        }
    }
}

impl fmt::Display for L3Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.spec().fmt(f)
    }
}

impl FromStr for L3Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<StackerSpec>()? {
            StackerSpec::SelectBest => Ok(L3Kind::SelectBest),
            StackerSpec::Greedy(n) => Ok(L3Kind::Greedy(n)),
            other => Err(Error::InvalidConfig(format!("`{other}` cannot be an L3 aggregator"))),
        }
    }
}

/// The fixed 14-stacker L2 portfolio. The three nonlinear slots use the
/// built-in tabular network.
pub fn portfolio14() -> Vec<StackerSpec> {
    use Param::{Positive, Softmax};
    let lin = StackerSpec::linear;
    vec![
        StackerSpec::Median,
        StackerSpec::Greedy(100),
        lin(Tying::Mi, Softmax),
        lin(Tying::Mt, Softmax),
        lin(Tying::Mq, Softmax),
        lin(Tying::Mit, Positive),
        lin(Tying::Mtq, Positive),
        lin(Tying::Miq, Positive),
        lin(Tying::Mqq, Positive),
        lin(Tying::Miqq, Positive),
        lin(Tying::Mtqq, Positive),
        StackerSpec::Tabular {
            kind: TabularKind::Tabular,
            scaled: false,
        },
        StackerSpec::Tabular {
            kind: TabularKind::Tabular,
            scaled: true,
        },
        StackerSpec::Tabular {
            kind: TabularKind::Mlp,
            scaled: true,
        },
    ]
}

/// The gradient-boosted or tabular-network stacker a built-in tabular slot
/// of [`portfolio14`] stands in for.
pub fn portfolio_substitute(spec: &StackerSpec) -> Option<&'static str> {
    match spec {
        StackerSpec::Tabular {
            kind: TabularKind::Tabular,
            scaled: false,
        } => Some("LightGBM"),
        StackerSpec::Tabular {
            kind: TabularKind::Tabular,
            scaled: true,
        } => Some("LightGBM (scaled)"),
        StackerSpec::Tabular {
            kind: TabularKind::Mlp,
            scaled: true,
        } => Some("RealMLP (scaled)"),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLayerSpec {
    pub l1: Vec<BaseLearnerSpec>,
    pub l2: Vec<StackerSpec>,
    pub l3: L3Kind,
    pub folds: usize,
    pub retrain_l2: bool,
}

impl Default for MultiLayerSpec {
    fn default() -> Self {
        Self {
            l1: BaseLearnerSpec::defaults(),
            l2: portfolio14(),
            l3: L3Kind::DEFAULT_GREEDY,
            folds: crate::cv::DEFAULT_FOLDS,
            retrain_l2: true,
        }
    }
}

/// One row the L3 aggregator was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct L3Row {
    pub fold: FoldId,
    pub item: String,
    /// Origin of the L2 input forecasts.
    pub origin_t: usize,
}

/// What went into each layer and how long it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub l2_names: Vec<String>,
    /// Stand-in names for substituted L2 slots, aligned with `l2_names`.
    pub l2_substitutes: Vec<Option<String>>,
    /// Windows the interim L2 stackers were fitted on.
    pub interim_folds: Vec<usize>,
    /// Windows the final L2 stackers were fitted on.
    pub final_folds: Vec<usize>,
    pub l3_rows: Vec<L3Row>,
    /// Window-K loss of every interim L2 stacker.
    pub window_k_losses: Vec<f64>,
    /// Window-K loss of the L3 combination.
    pub l3_loss: f64,
    /// L3 weight per L2 stacker.
    pub l3_weights: Vec<f64>,
    pub interim_seconds: Vec<f64>,
    /// Zero for every stacker when retraining is off.
    pub final_seconds: Vec<f64>,
    pub l3_seconds: f64,
}

impl Provenance {
    /// Stacker fit time of the whole ensemble, excluding base learners.
    pub fn total_seconds(&self) -> f64 {
        self.interim_seconds.iter().sum::<f64>() + self.final_seconds.iter().sum::<f64>() + self.l3_seconds
    }

    /// Checks that L3 rows come only from the last window and that the
    /// interim stackers never saw it. Returns the breaches found.
    pub fn audit(&self, store: &OofStore) -> Vec<String> {
        let k = store.meta.folds;
        let h = store.meta.task.horizon();
        let mut problems = Vec::new();
        if let Some(&bad) = self.interim_folds.iter().find(|&&f| f >= k) {
            problems.push(format!("interim L2 stackers were fitted on window {bad}"));
        }
        for row in &self.l3_rows {
            if row.fold != FoldId::Window(k) {
                problems.push(format!("L3 row for `{}` comes from window {}", row.item, row.fold));
                continue;
            }
            let expected = store
                .item_length(&row.item)
                .and_then(|len| fold_window(len, k, h, k))
                .map(|w| w.train_end);
            if expected != Some(row.origin_t) {
                problems.push(format!("L3 row for `{}` has origin {}", row.item, row.origin_t));
            }
        }
        problems
    }
}

/// Fitted L2 and L3 layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StackLayers {
    pub l2: Vec<TrainedStacker>,
    pub l3: TrainedStacker,
    pub provenance: Provenance,
}

impl StackLayers {
    /// Combines base forecasts through both layers.
    pub fn predict(&self, base: &ModelForecastSet) -> Result<Vec<QuantileForecast>> {
        let l2_set = l2_outputs(&self.l2, base)?;
        Ok(self
            .l3
            .combine(&l2_set)?
            .into_iter()
            .map(enforce_quantile_monotonicity)
            .collect())
    }
}

fn l2_outputs(stackers: &[TrainedStacker], base: &ModelForecastSet) -> Result<ModelForecastSet> {
    let names = stackers.iter().map(TrainedStacker::name).collect();
    let outputs = stackers.iter().map(|s| s.combine(base)).collect::<Result<Vec<_>>>()?;
    ModelForecastSet::new(names, outputs)
}

fn fit_all(specs: &[StackerSpec], data: &StackingData, opts: &FitOptions) -> Result<Vec<TrainedStacker>> {
    specs.par_iter().map(|s| fit_stacker(s, data, opts)).collect()
}

/// Fits the L2 portfolio once and one L3 aggregator per entry of `l3`.
pub fn fit_layers(
    store: &OofStore,
    l2: &[StackerSpec],
    l3: &[L3Kind],
    retrain_l2: bool,
    opts: &FitOptions,
) -> Result<Vec<StackLayers>> {
    let k = store.windows.len();
    if k < 2 {
        return Err(Error::InsufficientFolds(k));
    }
    if l2.is_empty() {
        return Err(Error::InvalidConfig("the L2 layer needs at least one stacker".into()));
    }
    let interim_folds: Vec<usize> = (1..k).collect();
    let interim_data = StackingData::from_store_folds(store, &interim_folds)?;
    let last = store.window(k).expect("k windows");
    let interim = fit_all(l2, &interim_data, opts)?;

    let l2_set = l2_outputs(&interim, &last.forecasts)?;
    let l3_data = StackingData::new(
        store.meta.task.clone(),
        l2_set.model_ids().to_vec(),
        vec![StackWindow::new(
            l2_set.clone(),
            last.targets.clone(),
            last.scales.clone(),
        )?],
    )?;
    let window_k_losses = l3_data.model_losses()?;
    let l3_rows: Vec<L3Row> = (0..l2_set.n_items())
        .map(|i| L3Row {
            fold: last.fold,
            item: l2_set.item_ids()[i].clone(),
            origin_t: last.forecasts.forecast(0, i).origin_t,
        })
        .collect();

    let (final_l2, final_seconds, final_folds) = if retrain_l2 {
        let fitted = fit_all(l2, &StackingData::from_store(store)?, opts)?;
        let seconds = fitted.iter().map(|s| s.fit_seconds).collect();
        (fitted, seconds, (1..=k).collect())
    } else {
        (interim.clone(), vec![0.0; l2.len()], interim_folds.clone())
    };

    l3.iter()
        .map(|kind| {
            let top = fit_stacker(&kind.spec(), &l3_data, opts)?;
            let provenance = Provenance {
                l2_names: l2_set.model_ids().to_vec(),
                l2_substitutes: l2.iter().map(|s| portfolio_substitute(s).map(String::from)).collect(),
                interim_folds: interim_folds.clone(),
                final_folds: final_folds.clone(),
                l3_rows: l3_rows.clone(),
                window_k_losses: window_k_losses.clone(),
                l3_loss: top.train_loss,
                l3_weights: top.model_weights().expect("L3 aggregators have model weights"),
                interim_seconds: interim.iter().map(|s| s.fit_seconds).collect(),
                final_seconds: final_seconds.clone(),
                l3_seconds: top.fit_seconds,
            };
            Ok(StackLayers {
                l2: final_l2.clone(),
                l3: top,
                provenance,
            })
        })
        .collect()
}

/// A full three-layer ensemble: base learners, L2 stackers and the L3
/// aggregator.
#[derive(Debug, Clone)]
pub struct MultiLayerEnsemble {
    pub spec: MultiLayerSpec,
    pub backtest: Backtest,
    pub layers: StackLayers,
}

/// Backtests the base learners on a training panel and fits both stacking
/// layers.
pub fn fit_multilayer(
    panel: &TimeSeriesPanel,
    spec: &MultiLayerSpec,
    task: &ForecastTask,
    backtest: &BacktestOptions,
    opts: &FitOptions,
) -> Result<MultiLayerEnsemble> {
    if spec.folds < 2 {
        return Err(Error::InsufficientFolds(spec.folds));
    }
    let bt = run_backtest(
        panel,
        &spec.l1,
        task,
        &BacktestOptions {
            folds: spec.folds,
            ..backtest.clone()
        },
    )?;
    let layers = fit_layers(&bt.store, &spec.l2, &[spec.l3], spec.retrain_l2, opts)?
        .pop()
        .expect("one L3 variant");
    Ok(MultiLayerEnsemble {
        spec: spec.clone(),
        backtest: bt,
        layers,
    })
}

/// Forecasts after each item's full training history.
pub fn predict_multilayer(
    ens: &MultiLayerEnsemble,
    panel_train: &TimeSeriesPanel,
    task: &ForecastTask,
) -> Result<Vec<QuantileForecast>> {
    let base = ens.backtest.forecast(panel_train, task)?;
    ens.layers.predict(&base)
}
