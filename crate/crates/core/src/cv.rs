//! Windowed time-series cross-validation and the out-of-fold store.
//!
//! For fold `k = 1..K` the last `j = K - k + 1` windows of size `H` are
//! removed; base learners are fitted on the remaining prefix and forecast the
//! next window. Fold `K` validates on the final `H` points.

use rayon::prelude::*;

use crate::baselearners::{BaseLearner, BaseLearnerSpec, FittedLearner, ResidualQuantilePolicy};
use crate::error::{Error, Result};
use crate::io::FoldId;
use crate::losses::seasonal_error;
use crate::series::{ForecastTask, ModelForecastSet, QuantileForecast, TimeSeries, TimeSeriesPanel};
use crate::timing::Timing;

/// Default K.
pub const DEFAULT_FOLDS: usize = 5;

/// Smallest training prefix accepted for seasonality `m`.
pub fn default_min_train(m: usize) -> usize {
    (m + 1).max(4)
}

/// One fold of the plan, in 1-based inclusive indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldWindow {
    pub fold: usize,
    pub train_end: usize,
    pub val_start: usize,
    pub val_end: usize,
}

/// Train/validation windows of every fold for a series of length `len`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub len: usize,
    pub folds: usize,
    pub horizon: usize,
    pub windows: Vec<FoldWindow>,
}

/// Window of fold `k` for a series of length `len`, without feasibility
/// checks. Returns `None` when the fold would start before the series.
pub fn fold_window(len: usize, folds: usize, horizon: usize, fold: usize) -> Option<FoldWindow> {
    let j = folds + 1 - fold;
    let train_end = len.checked_sub(j * horizon)?;
    Some(FoldWindow {
        fold,
        train_end,
        val_start: train_end + 1,
        val_end: train_end + horizon,
    })
}

pub fn split_folds(len: usize, folds: usize, horizon: usize, min_train: usize) -> Result<FoldPlan> {
    let infeasible = || Error::InsufficientLength {
        len,
        folds,
        horizon,
        min_train,
    };
    if folds == 0 || horizon == 0 {
        return Err(infeasible());
    }
    match len.checked_sub(folds * horizon) {
        Some(first_train) if first_train >= min_train => {}
        _ => return Err(infeasible()),
    }
    let windows = (1..=folds)
        .map(|k| fold_window(len, folds, horizon, k).expect("checked above"))
        .collect();
    Ok(FoldPlan {
        len,
        folds,
        horizon,
        windows,
    })
}

/// Training panel plus the held-out last `H` values of every item.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit {
    pub train: TimeSeriesPanel,
    /// Aligned with `train.series`.
    pub test: Vec<Vec<f64>>,
}

/// Reserves the last `horizon` observations of each series as the test set.
pub fn holdout_split(panel: &TimeSeriesPanel, horizon: usize) -> Result<HoldoutSplit> {
    if horizon == 0 {
        return Err(Error::InvalidTask("horizon must be >= 1".into()));
    }
    let mut train = Vec::with_capacity(panel.len());
    let mut test = Vec::with_capacity(panel.len());
    for s in &panel.series {
        if s.len() <= horizon {
            return Err(Error::InsufficientLength {
                len: s.len(),
                folds: 0,
                horizon,
                min_train: 1,
            });
        }
        let cut = s.len() - horizon;
        train.push(s.prefix(cut));
        test.push(s.values[cut..].to_vec());
    }
    Ok(HoldoutSplit {
        train: TimeSeriesPanel::new(train, panel.seasonality, panel.freq_label.clone()),
        test,
    })
}

/// Forecasts of every model on one window, with targets and scales.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub fold: FoldId,
    pub forecasts: ModelForecastSet,
    /// Ground truth per item, aligned with `forecasts.item_ids()`. Empty for
    /// a test window whose truth is unknown.
    pub targets: Vec<Vec<f64>>,
    /// Seasonal error of each item's training prefix.
    pub scales: Vec<f64>,
}

impl WindowRecord {
    pub fn has_targets(&self) -> bool {
        !self.targets.is_empty() || self.forecasts.n_items() == 0
    }
}

/// Wall time spent fitting one model on one fold, summed over items.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTime {
    pub model: String,
    pub fold: FoldId,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OofMeta {
    pub folds: usize,
    pub task: ForecastTask,
    pub model_ids: Vec<String>,
    pub seasonality: usize,
    pub min_train: usize,
    pub seed: u64,
}

/// Out-of-fold base-model forecasts: the stacker training set.
#[derive(Debug, Clone, PartialEq)]
pub struct OofStore {
    pub meta: OofMeta,
    /// Training length of every item, in panel order.
    pub items: Vec<(String, usize)>,
    /// Folds `1..=K`, in order.
    pub windows: Vec<WindowRecord>,
    pub test: Option<WindowRecord>,
    pub fit_times: Vec<FitTime>,
    /// Items left out of a fold because their prefix was too short.
    pub skipped: Vec<(FoldId, String)>,
}

impl OofStore {
    pub fn n_models(&self) -> usize {
        self.meta.model_ids.len()
    }

    pub fn window(&self, fold: usize) -> Option<&WindowRecord> {
        self.windows.get(fold.checked_sub(1)?)
    }

    pub fn item_length(&self, item: &str) -> Option<usize> {
        self.items.iter().find(|(id, _)| id == item).map(|(_, n)| *n)
    }

    /// Attaches holdout truth to the test window, aligned by item id.
    pub fn attach_test_targets(&mut self, holdout: &HoldoutSplit) -> Result<()> {
        let test = self
            .test
            .as_mut()
            .ok_or_else(|| Error::SchemaMismatch("store has no test window".into()))?;
        let ids: Vec<String> = holdout.train.item_ids();
        test.targets = test
            .forecasts
            .item_ids()
            .iter()
            .map(|item| {
                ids.iter()
                    .position(|i| i == item)
                    .map(|k| holdout.test[k].clone())
                    .ok_or_else(|| Error::SchemaMismatch(format!("no holdout values for `{item}`")))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Total fit seconds of one model over all folds and the test window.
    pub fn model_fit_seconds(&self, model: &str) -> f64 {
        self.fit_times
            .iter()
            .filter(|t| t.model == model)
            .map(|t| t.seconds)
            .sum()
    }
}

/// Settings of one backtest run.
#[derive(Debug, Clone)]
pub struct BacktestOptions {
    pub folds: usize,
    pub seed: u64,
    pub timing: Timing,
    /// Defaults to [`default_min_train`] of the panel seasonality.
    pub min_train: Option<usize>,
    pub policy: ResidualQuantilePolicy,
}

impl Default for BacktestOptions {
    fn default() -> Self {
        Self {
            folds: DEFAULT_FOLDS,
            seed: 0,
            timing: Timing::Wall,
            min_train: None,
            policy: ResidualQuantilePolicy::default(),
        }
    }
}

impl BacktestOptions {
    pub fn with_folds(mut self, folds: usize) -> Self {
        self.folds = folds;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_timing(mut self, timing: Timing) -> Self {
        self.timing = timing;
        self
    }
}

/// The OOF store plus the last-fold fits used for test prediction.
#[derive(Debug, Clone)]
pub struct Backtest {
    pub store: OofStore,
    /// `fitted[m][i]` for model `m` and panel item `i`.
    pub fitted: Vec<Vec<FittedLearner>>,
    pub policy: ResidualQuantilePolicy,
}

impl Backtest {
    /// Base-model forecasts after each item's full history.
    pub fn forecast(&self, panel: &TimeSeriesPanel, task: &ForecastTask) -> Result<ModelForecastSet> {
        let ids = &self.store.items;
        let forecasts =
            self.fitted
                .iter()
                .enumerate()
                .map(|(m, per_item)| {
                    panel
                        .series
                        .iter()
                        .map(|s| {
                            let i = ids.iter().position(|(id, _)| *id == s.item_id).ok_or_else(|| {
                                Error::SchemaMismatch(format!("item `{}` was not backtested", s.item_id))
                            })?;
                            per_item[i].forecast(s, task, &self.policy).map_err(|e| Error::Learner {
                                fold: FoldId::Test.to_string(),
                                model: self.store.meta.model_ids[m].clone(),
                                item: s.item_id.clone(),
                                source: Box::new(e),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
        ModelForecastSet::new(self.store.meta.model_ids.clone(), forecasts)
    }
}

fn annotate(fold: FoldId, model: &str, item: &str) -> impl Fn(Error) -> Error {
    let model = model.to_string();
    let item = item.to_string();
    move |e| Error::Learner {
        fold: fold.to_string(),
        model: model.clone(),
        item: item.clone(),
        source: Box::new(e),
    }
}

struct Cell {
    fitted: FittedLearner,
    forecast: QuantileForecast,
    seconds: f64,
}

fn fit_cell(
    learner: &BaseLearner,
    history: &TimeSeries,
    m: usize,
    task: &ForecastTask,
    opts: &BacktestOptions,
    fold: FoldId,
) -> Result<Cell> {
    let (result, seconds) = opts.timing.measure(|| -> Result<_> {
        let fitted = learner.fit(history, m)?;
        let forecast = fitted.forecast(history, task, &opts.policy)?;
        Ok((fitted, forecast))
    });
    let (fitted, forecast) = result.map_err(annotate(fold, &learner.name(), &history.item_id))?;
    Ok(Cell {
        fitted,
        forecast,
        seconds,
    })
}

/// Fits every learner on every `(item, training length)` pair in parallel.
/// Cells come back model-major, in the order of `histories`.
fn fit_grid(
    learners: &[BaseLearner],
    histories: &[TimeSeries],
    m: usize,
    task: &ForecastTask,
    opts: &BacktestOptions,
    fold: FoldId,
) -> Result<Vec<Vec<Cell>>> {
    let jobs: Vec<(usize, usize)> = (0..learners.len())
        .flat_map(|l| (0..histories.len()).map(move |i| (l, i)))
        .collect();
    let mut cells = jobs
        .par_iter()
        .map(|&(l, i)| fit_cell(&learners[l], &histories[i], m, task, opts, fold))
        .collect::<Result<Vec<_>>>()?
        .into_iter();
    Ok((0..learners.len())
        .map(|_| cells.by_ref().take(histories.len()).collect())
        .collect())
}

fn scales_of(histories: &[TimeSeries], m: usize) -> Result<Vec<f64>> {
    histories
        .iter()
        .map(|h| seasonal_error(&h.values, m).map(|a| a.value()))
        .collect()
}

/// Runs the K-fold backtest on a training panel, refitting every learner
/// from scratch in each fold, and forecasts the test window with the
/// last-fold fits.
///
/// Items whose prefix is shorter than the training minimum sit out that
/// fold. An item that sits out the last fold is fitted on its full history
/// for the test forecast.
pub fn run_backtest(
    panel: &TimeSeriesPanel,
    specs: &[BaseLearnerSpec],
    task: &ForecastTask,
    opts: &BacktestOptions,
) -> Result<Backtest> {
    if specs.is_empty() {
        return Err(Error::InvalidConfig("at least one base learner is required".into()));
    }
    if opts.folds == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    let m = panel.seasonality.max(1);
    let horizon = task.horizon();
    let min_train = opts.min_train.unwrap_or_else(|| default_min_train(m));
    let item_ids = panel.item_ids();
    let learners: Vec<BaseLearner> = specs
        .iter()
        .map(|s| BaseLearner::prepare(s.clone(), task, &item_ids))
        .collect::<Result<_>>()?;
    let model_ids: Vec<String> = learners.iter().map(BaseLearner::name).collect();
    for (k, id) in model_ids.iter().enumerate() {
        if model_ids[..k].contains(id) {
            return Err(Error::InvalidConfig(format!("duplicate base learner `{id}`")));
        }
    }

    let mut windows = Vec::with_capacity(opts.folds);
    let mut fit_times = Vec::new();
    let mut skipped = Vec::new();
    let mut last_fits: Vec<Vec<Option<FittedLearner>>> = vec![vec![None; panel.len()]; learners.len()];

    for k in 1..=opts.folds {
        let fold = FoldId::Window(k);
        let mut members = Vec::new();
        let mut histories = Vec::new();
        let mut targets = Vec::new();
        for (i, s) in panel.series.iter().enumerate() {
            match fold_window(s.len(), opts.folds, horizon, k).filter(|w| w.train_end >= min_train) {
                Some(w) => {
                    members.push(i);
                    histories.push(s.prefix(w.train_end));
                    targets.push(s.values[w.val_start - 1..w.val_end].to_vec());
                }
                None => skipped.push((fold, s.item_id.clone())),
            }
        }
        let grid = fit_grid(&learners, &histories, m, task, opts, fold)?;
        let mut forecasts = Vec::with_capacity(learners.len());
        for (l, cells) in grid.into_iter().enumerate() {
            fit_times.push(FitTime {
                model: model_ids[l].clone(),
                fold,
                seconds: cells.iter().map(|c| c.seconds).sum(),
            });
            let mut per_item = Vec::with_capacity(cells.len());
            for (cell, &i) in cells.into_iter().zip(&members) {
                if k == opts.folds {
                    last_fits[l][i] = Some(cell.fitted);
                }
                per_item.push(cell.forecast);
            }
            forecasts.push(per_item);
        }
        windows.push(WindowRecord {
            fold,
            forecasts: ModelForecastSet::new(model_ids.clone(), forecasts)?,
            targets,
            scales: scales_of(&histories, m)?,
        });
    }

    // Items that sat out the last fold get a fit on their full history.
    let missing: Vec<usize> = (0..panel.len()).filter(|&i| last_fits[0][i].is_none()).collect();
    if !missing.is_empty() {
        let histories: Vec<TimeSeries> = missing.iter().map(|&i| panel.series[i].clone()).collect();
        let grid = fit_grid(&learners, &histories, m, task, opts, FoldId::Test)?;
        for (l, cells) in grid.into_iter().enumerate() {
            for (cell, &i) in cells.into_iter().zip(&missing) {
                last_fits[l][i] = Some(cell.fitted);
            }
        }
    }
    let fitted: Vec<Vec<FittedLearner>> = last_fits
        .into_iter()
        .map(|per_item| per_item.into_iter().map(|f| f.expect("every item fitted")).collect())
        .collect();

    let store = OofStore {
        meta: OofMeta {
            folds: opts.folds,
            task: task.clone(),
            model_ids,
            seasonality: m,
            min_train,
            seed: opts.seed,
        },
        items: panel.series.iter().map(|s| (s.item_id.clone(), s.len())).collect(),
        windows,
        test: None,
        fit_times,
        skipped,
    };
    let mut backtest = Backtest {
        store,
        fitted,
        policy: opts.policy,
    };
    let test_forecasts = backtest.forecast(panel, task)?;
    backtest.store.test = Some(WindowRecord {
        fold: FoldId::Test,
        forecasts: test_forecasts,
        targets: Vec::new(),
        scales: scales_of(&panel.series, m)?,
    });
    Ok(backtest)
}

/// Builds the out-of-fold store of `specs` on a training panel.
pub fn build_oof(
    panel: &TimeSeriesPanel,
    specs: &[BaseLearnerSpec],
    folds: usize,
    task: &ForecastTask,
    seed: u64,
) -> Result<OofStore> {
    let opts = BacktestOptions::default().with_folds(folds).with_seed(seed);
    run_backtest(panel, specs, task, &opts).map(|b| b.store)
}

/// Kind of contract breach found by [`leakage_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// The forecast origin lies inside (or after the start of) its window.
    OriginInsideWindow,
    /// The forecast origin is before the fold's training end.
    Misaligned,
    /// Forecast or target length differs from `H`.
    WrongLength,
    /// The item is unknown to the store.
    UnknownItem,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub fold: FoldId,
    pub model: String,
    pub item: String,
    pub kind: ViolationKind,
}

/// Audits a store: every forecast must be issued exactly at its fold's
/// training end and cover exactly that fold's window.
pub fn leakage_check(store: &OofStore) -> Vec<Violation> {
    let horizon = store.meta.task.horizon();
    let k_total = store.meta.folds;
    let mut out = Vec::new();
    for (w_idx, w) in store.windows.iter().enumerate() {
        let k = match w.fold {
            FoldId::Window(k) => k,
            FoldId::Test => w_idx + 1,
        };
        let set = &w.forecasts;
        for (i, item) in set.item_ids().iter().enumerate() {
            let expected = store
                .item_length(item)
                .and_then(|len| fold_window(len, k_total, horizon, k));
            let target_ok = w.targets.get(i).is_some_and(|t| t.len() == horizon);
            for (mi, model) in set.model_ids().iter().enumerate() {
                let f = set.forecast(mi, i);
                let mut push = |kind| {
                    out.push(Violation {
                        fold: w.fold,
                        model: model.clone(),
                        item: item.clone(),
                        kind,
                    })
                };
                let Some(win) = expected else {
                    push(ViolationKind::UnknownItem);
                    continue;
                };
                if f.origin_t >= win.val_start {
                    push(ViolationKind::OriginInsideWindow);
                } else if f.origin_t != win.train_end {
                    push(ViolationKind::Misaligned);
                }
                if f.horizon() != horizon || !target_ok {
                    push(ViolationKind::WrongLength);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselearners::point_path;
    use crate::series::EvalLoss;
    use proptest::prelude::*;

    fn task(h: usize) -> ForecastTask {
        ForecastTask::new(h, vec![0.1, 0.5, 0.9], EvalLoss::Sql).unwrap()
    }

    fn panel(lengths: &[usize], m: usize) -> TimeSeriesPanel {
        let series = lengths
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let v = (0..n)
                    .map(|t| 10.0 + ((t * 7 + k * 3) % 11) as f64 + 0.2 * t as f64)
                    .collect();
                TimeSeries::from_values(format!("item{k}"), v)
            })
            .collect();
        TimeSeriesPanel::new(series, m, "D")
    }

    #[test]
    fn fold_plan_matches_enumeration() {
        let plan = split_folds(10, 3, 2, 4).unwrap();
        let got: Vec<_> = plan
            .windows
            .iter()
            .map(|w| (w.train_end, w.val_start, w.val_end))
            .collect();
        assert_eq!(got, vec![(4, 5, 6), (6, 7, 8), (8, 9, 10)]);
    }

    #[test]
    fn single_fold_validates_last_window() {
        let plan = split_folds(12, 1, 3, 4).unwrap();
        assert_eq!(plan.windows.len(), 1);
        let w = plan.windows[0];
        assert_eq!((w.train_end, w.val_start, w.val_end), (9, 10, 12));
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(matches!(
            split_folds(5, 3, 2, 4),
            Err(Error::InsufficientLength { len: 5, .. })
        ));
        assert!(split_folds(10, 0, 2, 4).is_err());
    }

    #[test]
    fn holdout_removes_last_h() {
        let p = TimeSeriesPanel::new(
            vec![
                TimeSeries::from_values("a", (1..=10).map(f64::from).collect()),
                TimeSeries::from_values("b", (1..=7).map(f64::from).collect()),
            ],
            1,
            "D",
        );
        let split = holdout_split(&p, 2).unwrap();
        assert_eq!(split.train.series[0].values, (1..=8).map(f64::from).collect::<Vec<_>>());
        assert_eq!(split.test[0], vec![9.0, 10.0]);
        assert_eq!(split.train.series[1].len(), 5);
        assert_eq!(split.test[1], vec![6.0, 7.0]);
    }

    #[test]
    fn store_counts_and_contents() {
        let p = panel(&[16], 1);
        let store = build_oof(&p, &[BaseLearnerSpec::SeasonalNaive], 2, &task(2), 0).unwrap();
        assert_eq!(store.windows.len(), 2);
        assert!(store.windows.iter().all(|w| w.targets.len() == 1));
        for w in &store.windows {
            let f = w.forecasts.forecast(0, 0);
            let prefix = p.series[0].prefix(f.origin_t);
            let expected = point_path(&BaseLearnerSpec::SeasonalNaive, &prefix, 1, 2).unwrap();
            assert_eq!(f.column(1), expected);
        }
        assert!(store.fit_times.iter().all(|t| t.seconds > 0.0));
        assert!(leakage_check(&store).is_empty());
        assert_eq!(store.test.as_ref().unwrap().forecasts.forecast(0, 0).origin_t, 16);
    }

    #[test]
    fn short_items_sit_out_early_folds() {
        let p = panel(&[30, 12], 1);
        let store = build_oof(&p, &BaseLearnerSpec::reduced(), 3, &task(3), 0).unwrap();
        // Item 1 has 12 - 3*3 = 3 < 4 points in fold 1.
        assert_eq!(store.skipped, vec![(FoldId::Window(1), "item1".to_string())]);
        assert_eq!(store.windows[0].forecasts.n_items(), 1);
        assert_eq!(store.windows[1].forecasts.n_items(), 2);
        assert!(leakage_check(&store).is_empty());
    }

    #[test]
    fn leakage_check_flags_bad_records() {
        let p = panel(&[20], 1);
        let mut store = build_oof(&p, &[BaseLearnerSpec::SeasonalNaive], 2, &task(2), 0).unwrap();
        let w = &store.windows[0];
        let f = w.forecasts.forecast(0, 0);
        let moved = QuantileForecast::new("item0", f.origin_t + 1, 2, 3, f.values().to_vec()).unwrap();
        let mut bad = store.clone();
        bad.windows[0].forecasts = ModelForecastSet::new(vec!["SeasonalNaive".into()], vec![vec![moved]]).unwrap();
        let v = leakage_check(&bad);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::OriginInsideWindow);

        store.windows[1].targets[0].pop();
        let v = leakage_check(&store);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, ViolationKind::WrongLength);
    }

    #[test]
    fn backtest_is_deterministic() {
        let p = panel(&[40, 33, 48], 4);
        let opts = BacktestOptions::default().with_folds(3).with_timing(Timing::Off);
        let a = run_backtest(&p, &BaseLearnerSpec::defaults(), &task(4), &opts).unwrap();
        let b = run_backtest(&p, &BaseLearnerSpec::defaults(), &task(4), &opts).unwrap();
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn learner_errors_are_annotated() {
        let p = panel(&[6], 6);
        let opts = BacktestOptions {
            folds: 1,
            min_train: Some(2),
            ..Default::default()
        };
        let err = run_backtest(&p, &[BaseLearnerSpec::SeasonalNaive], &task(2), &opts).unwrap_err();
        assert!(
            matches!(&err, Error::Learner { fold, model, item, .. } if fold == "1" && model == "SeasonalNaive" && item == "item0"),
            "{err}"
        );
    }

    proptest! {
        #[test]
        fn windows_tile_the_tail(h in 1usize..6, k in 1usize..6, extra in 0usize..5) {
            let len = 8 * h + extra;
            prop_assume!(len >= k * h + 4);
            let plan = split_folds(len, k, h, 4).unwrap();
            let mut covered = vec![0u8; len + 1];
            for w in &plan.windows {
                prop_assert_eq!(w.train_end + 1, w.val_start);
                for c in &mut covered[w.val_start..=w.val_end] {
                    *c += 1;
                }
            }
            for (t, &c) in covered.iter().enumerate().skip(1) {
                prop_assert_eq!(c, u8::from(t > len - k * h));
            }
            for pair in plan.windows.windows(2) {
                prop_assert!(pair[1].train_end > pair[0].train_end);
            }
            prop_assert_eq!(plan.windows.last().unwrap().val_end, len);
        }
    }
}
