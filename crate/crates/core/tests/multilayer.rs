use stackcast::baselearners::BaseLearnerSpec;
use stackcast::cv::{holdout_split, run_backtest, BacktestOptions, OofStore};
use stackcast::io::FoldId;
use stackcast::multilayer::{fit_layers, L3Kind};
use stackcast::stackers::{fit_stacker, FitOptions, Param, StackerSpec, StackingData, Tying};
use stackcast::synthetic::{generate, Regime, SyntheticSpec};
use stackcast::timing::Timing;
use stackcast::{Error, EvalLoss, ForecastTask};

fn store(folds: usize) -> OofStore {
    let panel = generate(&SyntheticSpec {
        name: "ml".into(),
        regime: Regime::Seasonal,
        n_items: 6,
        length: 36,
        seasonality: 4,
        horizon: 3,
        seed: 3,
    });
    let split = holdout_split(&panel, 3).unwrap();
    let task = ForecastTask::new(3, vec![0.1, 0.5, 0.9], EvalLoss::Sql).unwrap();
    let opts = BacktestOptions::default().with_folds(folds).with_timing(Timing::Off);
    run_backtest(&split.train, &BaseLearnerSpec::defaults(), &task, &opts)
        .unwrap()
        .store
}

fn opts() -> FitOptions {
    FitOptions {
        timing: Timing::Off,
        tabular_max_steps: Some(50),
        ..FitOptions::default()
    }
}

fn l2() -> Vec<StackerSpec> {
    vec![
        StackerSpec::Median,
        StackerSpec::Greedy(20),
        StackerSpec::linear(Tying::Mq, Param::Softmax),
    ]
}

#[test]
fn select_best_passes_the_best_l2_through() {
    let store = store(3);
    let layers = fit_layers(&store, &l2(), &[L3Kind::SelectBest], true, &opts())
        .unwrap()
        .remove(0);
    let p = &layers.provenance;
    let best = p.window_k_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let k = p.window_k_losses.iter().position(|&l| l == best).unwrap();
    let weights: Vec<f64> = (0..3).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
    assert_eq!(p.l3_weights, weights);
    let test = &store.test.as_ref().unwrap().forecasts;
    assert_eq!(layers.predict(test).unwrap(), layers.l2[k].combine(test).unwrap());
}

#[test]
fn single_l2_is_passed_through_by_both_aggregators() {
    let store = store(2);
    let all = fit_layers(
        &store,
        &[StackerSpec::Median],
        &[L3Kind::SelectBest, L3Kind::Greedy(100)],
        true,
        &opts(),
    )
    .unwrap();
    let test = &store.test.as_ref().unwrap().forecasts;
    for layers in all {
        assert_eq!(layers.provenance.l3_weights, vec![1.0]);
        assert_eq!(layers.predict(test).unwrap(), layers.l2[0].combine(test).unwrap());
    }
}

#[test]
fn provenance_passes_audit_and_names_windows() {
    let store = store(4);
    let layers = fit_layers(&store, &l2(), &[L3Kind::Greedy(100)], true, &opts())
        .unwrap()
        .remove(0);
    let p = &layers.provenance;
    assert!(p.audit(&store).is_empty());
    assert_eq!(p.interim_folds, vec![1, 2, 3]);
    assert_eq!(p.final_folds, vec![1, 2, 3, 4]);
    assert!(p.l3_rows.iter().all(|r| r.fold == FoldId::Window(4)));
    assert!((p.l3_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p.l2_names.len(), 3);
}

#[test]
fn retraining_refits_l2_on_every_window() {
    let store = store(3);
    let on = fit_layers(&store, &l2(), &[L3Kind::SelectBest], true, &opts())
        .unwrap()
        .remove(0);
    let off = fit_layers(&store, &l2(), &[L3Kind::SelectBest], false, &opts())
        .unwrap()
        .remove(0);
    let all = StackingData::from_store(&store).unwrap();
    let interim = StackingData::from_store_folds(&store, &[1, 2]).unwrap();
    for (j, spec) in l2().iter().enumerate() {
        assert_eq!(on.l2[j].payload, fit_stacker(spec, &all, &opts()).unwrap().payload);
        assert_eq!(off.l2[j].payload, fit_stacker(spec, &interim, &opts()).unwrap().payload);
    }
    assert_eq!(off.provenance.final_folds, vec![1, 2]);
    assert!(off.provenance.final_seconds.iter().all(|&s| s == 0.0));
    assert_eq!(on.provenance.l3_weights, off.provenance.l3_weights);
}

#[test]
fn one_window_is_rejected() {
    let store = store(1);
    let err = fit_layers(&store, &l2(), &[L3Kind::SelectBest], true, &opts()).unwrap_err();
    assert_eq!(err, Error::InsufficientFolds(1));
}
