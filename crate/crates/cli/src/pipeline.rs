//! In-memory fitting and holdout scoring of configured methods.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use stackcast::cv::OofStore;
use stackcast::evalreport::EvalRecord;
use stackcast::multilayer::{fit_layers, L3Kind, StackLayers};
use stackcast::stackers::{fit_stacker, FitOptions, StackWindow, StackerSpec, StackingData, TrainedStacker};
use stackcast::QuantileForecast;

use crate::config::Method;

/// Record name of a method. Ensembles fitted without L2 retraining carry a
/// suffix so both variants can share a leaderboard.
pub fn method_label(method: &Method, l2_retrain: bool) -> String {
    match method {
        Method::Layered(_) if !l2_retrain => format!("{method}(no-retrain)"),
        _ => method.to_string(),
    }
}

/// The holdout window as a one-window stacking set.
pub fn holdout_data(store: &OofStore) -> Result<StackingData> {
    let test = store.test.as_ref().ok_or_else(|| anyhow!("store has no test window"))?;
    if !test.has_targets() {
        return Err(anyhow!("store has no holdout targets"));
    }
    Ok(StackingData::new(
        store.meta.task.clone(),
        store.meta.model_ids.clone(),
        vec![StackWindow::new(
            test.forecasts.clone(),
            test.targets.clone(),
            test.scales.clone(),
        )?],
    )?)
}

/// Holdout score of one set of combined forecasts.
pub fn holdout_loss(holdout: &StackingData, forecasts: Vec<QuantileForecast>) -> Result<f64> {
    Ok(holdout.evaluate(&[forecasts])?.value)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub records: Vec<EvalRecord>,
    /// Single-layer stackers, in method order.
    pub singles: Vec<TrainedStacker>,
    /// Multi-layer ensembles with their record names, in method order.
    pub layers: Vec<(String, StackLayers)>,
}

/// Fits every method on the store's validation windows and scores it on the
/// holdout window.
///
/// When L2 retraining is on, a single-layer method that also sits in the L2
/// portfolio reuses the final L2 fit: both are the same fit on the same
/// windows.
pub fn fit_methods(
    store: &OofStore,
    methods: &[Method],
    l2: &[StackerSpec],
    l2_retrain: bool,
    opts: &FitOptions,
    dataset: &str,
) -> Result<FitOutcome> {
    let metric = store.meta.task.eval_loss();
    let holdout = holdout_data(store)?;
    let mut kinds: Vec<L3Kind> = Vec::new();
    for m in methods {
        if let Method::Layered(k) = m {
            if !kinds.contains(k) {
                kinds.push(*k);
            }
        }
    }
    let fitted_layers = if kinds.is_empty() {
        Vec::new()
    } else {
        fit_layers(store, l2, &kinds, l2_retrain, opts)?
    };
    let shared = |spec: &StackerSpec| -> Option<TrainedStacker> {
        let layers = fitted_layers.first().filter(|_| l2_retrain)?;
        l2.iter().position(|s| s == spec).map(|k| layers.l2[k].clone())
    };

    let singles_specs: Vec<StackerSpec> = methods
        .iter()
        .filter_map(|m| match m {
            Method::Single(s) => Some(*s),
            Method::Layered(_) => None,
        })
        .collect();
    let need_fit = singles_specs.iter().any(|s| shared(s).is_none());
    let train = if need_fit {
        Some(StackingData::from_store(store)?)
    } else {
        None
    };
    let singles: Vec<TrainedStacker> = singles_specs
        .par_iter()
        .map(|s| match shared(s) {
            Some(t) => Ok(t),
            None => Ok(fit_stacker(s, train.as_ref().expect("training data built"), opts)?),
        })
        .collect::<Result<_>>()?;

    let test = &holdout.windows[0].forecasts;
    let mut records = Vec::new();
    let mut layers = Vec::new();
    let mut single_iter = singles.iter();
    for m in methods {
        let name = method_label(m, l2_retrain);
        let (loss, seconds) = match m {
            Method::Single(_) => {
                let s = single_iter.next().expect("one fit per single method");
                (holdout_loss(&holdout, s.combine(test)?)?, s.fit_seconds)
            }
            Method::Layered(k) => {
                let idx = kinds.iter().position(|x| x == k).expect("kind fitted");
                let ens = &fitted_layers[idx];
                layers.push((name.clone(), ens.clone()));
                (
                    holdout_loss(&holdout, ens.predict(test)?)?,
                    ens.provenance.total_seconds(),
                )
            }
        };
        records.push(EvalRecord::new(name, dataset, metric, loss, seconds));
    }
    Ok(FitOutcome {
        records,
        singles,
        layers,
    })
}
