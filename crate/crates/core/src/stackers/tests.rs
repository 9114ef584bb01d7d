use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::series::{EvalLoss, ForecastTask};

fn task(h: usize, levels: &[f64]) -> ForecastTask {
    ForecastTask::new(h, levels.to_vec(), EvalLoss::Sql).unwrap()
}

/// Data where model `m` forecasts `values[m]` at every cell of every item.
fn constant_data(values: &[f64], targets: f64, items: usize, t: &ForecastTask) -> StackingData {
    let (h, nq) = (t.horizon(), t.n_quantiles());
    let ids: Vec<String> = (0..values.len()).map(|m| format!("m{m}")).collect();
    let forecasts = values
        .iter()
        .map(|&v| {
            (0..items)
                .map(|i| QuantileForecast::new(format!("i{i}"), 10, h, nq, vec![v; h * nq]).unwrap())
                .collect()
        })
        .collect();
    let set = ModelForecastSet::new(ids.clone(), forecasts).unwrap();
    let window = StackWindow::new(set, vec![vec![targets; h]; items], vec![1.0; items]).unwrap();
    StackingData::new(t.clone(), ids, vec![window]).unwrap()
}

/// Random data with `windows` windows, `items` items and `m` models.
fn random_data(rng: &mut ChaCha8Rng, m: usize, items: usize, windows: usize, t: &ForecastTask) -> StackingData {
    let (h, nq) = (t.horizon(), t.n_quantiles());
    let ids: Vec<String> = (0..m).map(|k| format!("m{k}")).collect();
    let mut out = Vec::new();
    for _ in 0..windows {
        let targets: Vec<Vec<f64>> = (0..items)
            .map(|_| (0..h).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let forecasts = (0..m)
            .map(|k| {
                let bias = k as f64 * 0.4 - 0.5;
                targets
                    .iter()
                    .enumerate()
                    .map(|(i, y)| {
                        let mut values = Vec::new();
                        for &yt in y {
                            let centre = yt + bias + rng.random_range(-1.0..1.0);
                            let mut row: Vec<f64> = t
                                .quantiles()
                                .iter()
                                .map(|q| centre + (q - 0.5) * rng.random_range(0.5..2.0))
                                .collect();
                            row.sort_by(f64::total_cmp);
                            values.extend(row);
                        }
                        QuantileForecast::new(format!("i{i}"), 10, h, nq, values).unwrap()
                    })
                    .collect()
            })
            .collect();
        let set = ModelForecastSet::new(ids.clone(), forecasts).unwrap();
        let scales = (0..items).map(|_| rng.random_range(0.5..2.0)).collect();
        out.push(StackWindow::new(set, targets, scales).unwrap());
    }
    StackingData::new(t.clone(), ids, out).unwrap()
}

fn fit(spec: &str, data: &StackingData) -> TrainedStacker {
    fit_stacker(&spec.parse().unwrap(), data, &FitOptions::default()).unwrap()
}

#[test]
fn spec_names_round_trip() {
    let names = [
        "Mean",
        "Median",
        "SelectBest",
        "PerfWeighted(inv)",
        "PerfWeighted(exp)",
        "Greedy(100)",
        "Linear(mitq,positive)",
        "Linear(mqq,softmax)",
        "Tabular",
        "Tabular(scaled)",
        "MLP(scaled)",
    ];
    for n in names {
        assert_eq!(n.parse::<StackerSpec>().unwrap().to_string(), n);
    }
    assert!("Greedy(0)".parse::<StackerSpec>().is_err());
    assert!("Linear(mz,softmax)".parse::<StackerSpec>().is_err());
}

#[test]
fn mean_and_median_of_constants() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let data = constant_data(&[1.0, 3.0], 0.0, 2, &t);
    let out = fit("Mean", &data).combine(&data.windows[0].forecasts).unwrap();
    assert!(out.iter().all(|f| f.values().iter().all(|&v| v == 2.0)));
    let single = constant_data(&[7.0], 0.0, 1, &t);
    let out = fit("Median", &single).combine(&single.windows[0].forecasts).unwrap();
    assert_eq!(out[0], *single.windows[0].forecasts.forecast(0, 0));
}

#[test]
fn fixed_model_weights_apply() {
    let t = task(3, &[0.25, 0.5, 0.75]);
    let data = constant_data(&[0.0, 4.0], 0.0, 1, &t);
    let mut ts = fit("Mean", &data);
    ts.spec = StackerSpec::Greedy(4);
    ts.payload = Payload::Weights(WeightTensor::per_model(vec![0.75, 0.25]));
    let out = ts.combine(&data.windows[0].forecasts).unwrap();
    assert!(out[0].values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
}

#[test]
fn select_best_picks_lowest_loss_then_lowest_index() {
    let t = task(1, &[0.5]);
    let data = constant_data(&[0.9, 1.1], 0.0, 1, &t);
    assert_eq!(fit("SelectBest", &data).payload, Payload::Choice(0));
    let tie = constant_data(&[1.0, -1.0, 2.0], 0.0, 1, &t);
    assert_eq!(fit("SelectBest", &tie).payload, Payload::Choice(0));
    let one = constant_data(&[5.0], 0.0, 1, &t);
    assert_eq!(fit("SelectBest", &one).payload, Payload::Choice(0));
}

#[test]
fn greedy_examples() {
    let t = task(1, &[0.5]);
    let pm = constant_data(&[1.0, -1.0], 0.0, 3, &t);
    let g = fit_greedy(&pm, 2).unwrap();
    assert_eq!(g.weights, vec![0.5, 0.5]);
    assert_eq!(g.loss, 0.0);
    let g1 = fit_greedy(&pm, 1).unwrap();
    assert_eq!(g1.weights, vec![1.0, 0.0]);

    let exact = constant_data(&[0.0, 1.0], 0.0, 2, &t);
    for s in [1, 5, 50] {
        assert_eq!(fit_greedy(&exact, s).unwrap().weights, vec![1.0, 0.0]);
    }
}

#[test]
fn linear_single_model_is_identity() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = random_data(&mut rng, 1, 3, 2, &t);
    // Across-quantile schemes may still mix quantiles of the single model.
    for tying in Tying::ALL.into_iter().filter(|t| !t.across_quantiles()) {
        let ts = fit_stacker(
            &StackerSpec::linear(tying, Param::Softmax),
            &data,
            &FitOptions::default(),
        )
        .unwrap();
        let out = ts.combine(&data.windows[0].forecasts).unwrap();
        for (i, f) in out.iter().enumerate() {
            let raw = data.windows[0].forecasts.forecast(0, i);
            for (a, b) in f.values().iter().zip(raw.values()) {
                assert!((a - b).abs() < 1e-9, "{tying}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn linear_softmax_balances_opposite_biases() {
    let t = task(1, &[0.5]);
    let data = constant_data(&[1.0, -1.0], 0.0, 2, &t);
    let fit = fit_linear(&data, Tying::M, Param::Softmax, &OptimConfig::default()).unwrap();
    assert!(fit.loss < 1e-3, "{}", fit.loss);
    assert!((fit.weights.values[0] - 0.5).abs() < 1e-3);
}

#[test]
fn across_quantile_layouts_start_at_the_average() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = random_data(&mut rng, 3, 4, 2, &t);
    let mean = fit("Mean", &data).train_loss;
    for (tying, param) in [
        (Tying::Mqq, Param::Positive),
        (Tying::Miqq, Param::Softmax),
        (Tying::Mtqq, Param::Positive),
    ] {
        let obj = LinearObjective::new(&data, tying, param).unwrap();
        let uniform = obj.loss_of_weights(&obj.uniform_weights());
        assert!((uniform - mean).abs() < 1e-9, "{tying}/{param}");
    }
}

#[test]
fn unseen_items_fall_back_to_mean_weights() {
    let t = task(1, &[0.5]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = random_data(&mut rng, 2, 3, 2, &t);
    let ts = fit("Linear(mi,softmax)", &data);
    let Payload::Weights(w) = &ts.payload else { panic!() };
    let renamed: Vec<Vec<QuantileForecast>> = (0..2)
        .map(|m| {
            let f = data.windows[0].forecasts.forecast(m, 0);
            vec![QuantileForecast::new("new", f.origin_t, 1, 1, f.values().to_vec()).unwrap()]
        })
        .collect();
    let set = ModelForecastSet::new(data.model_ids.clone(), renamed).unwrap();
    let c = ts.combine_with_report(&set).unwrap();
    assert_eq!(c.unseen_items, vec!["new".to_string()]);
    let mean_w: Vec<f64> = (0..2)
        .map(|m| (0..3).map(|i| w.values[i * 2 + m]).sum::<f64>() / 3.0)
        .collect();
    let expected = mean_w[0] * set.forecast(0, 0).get(0, 0) + mean_w[1] * set.forecast(1, 0).get(0, 0);
    assert!((c.forecasts[0].get(0, 0) - expected).abs() < 1e-12);
}

#[test]
fn tabular_rows_layout() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = random_data(&mut rng, 2, 2, 1, &t);
    let rows = build_tabular_rows(&data);
    assert_eq!((rows.rows.len(), rows.n_features), (4, 6));
    let w = &data.windows[0];
    for r in &rows.rows {
        let i = w.forecasts.item_ids().iter().position(|x| *x == r.item).unwrap();
        assert_eq!(r.target, w.targets[i][r.h]);
        assert_eq!(&r.features[3..6], w.forecasts.forecast(1, i).row(r.h));
    }
    assert_eq!((rows.rows[1].item.as_str(), rows.rows[1].h), ("i0", 1));
}

#[test]
fn scaled_identity_is_identity() {
    let x = [3.0, -1.0, 7.5, 2.0];
    let out = Scaled {
        inner: IdentityRegressor { n_outputs: 4 },
    }
    .predict(&x);
    for (a, b) in out.iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
    let flat = Scaled {
        inner: IdentityRegressor { n_outputs: 2 },
    }
    .predict(&[4.0, 4.0, 4.0]);
    assert!(flat.iter().all(|v| v.is_finite() && (v - 4.0).abs() < 1e-12));
}

#[test]
fn tabular_improves_on_zero_network() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = random_data(&mut rng, 2, 4, 2, &t);
    for scaled in [false, true] {
        let mut cfg = TabularKind::Tabular.config(scaled);
        cfg.optim.max_steps = 200;
        let fit = fit_tabular(&data, &cfg).unwrap();
        // Independent recomputation of the zero network's loss.
        let rows = build_tabular_rows(&data);
        let n = rows.rows.len() as f64 * 3.0;
        let zero: f64 = rows
            .rows
            .iter()
            .map(|r| {
                t.quantiles()
                    .iter()
                    .map(|&q| {
                        let pred = if scaled {
                            RowScaling::of(&r.features).inverse(0.0)
                        } else {
                            0.0
                        };
                        crate::losses::pinball(pred, r.target, q)
                    })
                    .sum::<f64>()
                    / (n * r.scale)
            })
            .sum();
        assert!((fit.initial_loss - zero).abs() < 1e-9);
        assert!(fit.loss <= zero);
    }
}

#[test]
fn early_stopping_needs_two_windows() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = random_data(&mut rng, 2, 4, 1, &t);
    let mut cfg = TabularKind::Tabular.config(true);
    cfg.optim.max_steps = 80;
    let on = fit_tabular(&data, &cfg).unwrap().model;
    cfg.early_stopping = false;
    assert_eq!(on, fit_tabular(&data, &cfg).unwrap().model);
}

#[test]
fn early_stopping_shortens_the_full_fit() {
    let t = task(2, &[0.1, 0.5, 0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let data = random_data(&mut rng, 3, 4, 3, &t);
    let mut cfg = TabularKind::Tabular.config(true);
    cfg.optim.max_steps = 60;
    let stopped = fit_tabular(&data, &cfg).unwrap().model;
    cfg.early_stopping = false;
    let matches = (0..=60).any(|n| {
        cfg.optim.max_steps = n;
        fit_tabular(&data, &cfg).unwrap().model == stopped
    });
    assert!(matches);
}

#[test]
fn tabular_gradient_matches_finite_differences() {
    let t = task(2, &[0.2, 0.8]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = random_data(&mut rng, 2, 2, 1, &t);
    let rows = build_tabular_rows(&data);
    let mut net = Mlp::init(4, 3, 2, true, 1);
    for p in net.params.iter_mut() {
        *p += 0.3;
    }
    let obj = TabularObjective::new(&rows, t.quantiles(), net, true).unwrap();
    let dev = crate::optim::check_gradient(&obj, &obj.init(), 1e-6);
    assert!(dev < 1e-4, "{dev}");
}

#[test]
fn mismatched_inputs_are_rejected() {
    let t = task(1, &[0.5]);
    let two = constant_data(&[1.0, 2.0], 0.0, 1, &t);
    let three = constant_data(&[1.0, 2.0, 3.0], 0.0, 1, &t);
    let ts = fit("Mean", &two);
    assert!(matches!(
        ts.combine(&three.windows[0].forecasts),
        Err(Error::ShapeMismatch(_))
    ));
}

fn arb_case() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..5, 1usize..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn weight_constraints_hold((seed, m, items) in arb_case(), tying_ix in 0usize..11) {
        let t = task(2, &[0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, m, items, 2, &t);
        let tying = Tying::ALL[tying_ix];
        let cfg = OptimConfig { max_steps: 100, ..OptimConfig::default() };
        for param in [Param::Softmax, Param::Positive] {
            let fit = fit_linear(&data, tying, param, &cfg).unwrap();
            prop_assert!(fit.loss <= fit.uniform_loss + 1e-9);
            let w = &fit.weights;
            for s in 0..w.n_slices() {
                let slice = w.slice(s);
                match param {
                    Param::Softmax => {
                        prop_assert!((slice.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        prop_assert!(slice.iter().all(|&x| x > 0.0));
                    }
                    Param::Positive => prop_assert!(slice.iter().all(|&x| x >= 0.0)),
                }
            }
        }
    }

    #[test]
    fn greedy_beats_best_single_model((seed, m, items) in arb_case(), s in 1usize..30) {
        let t = task(2, &[0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, m, items, 2, &t);
        let g = fit_greedy(&data, s).unwrap();
        let best = data.model_losses().unwrap().into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(g.loss <= best);
        prop_assert_eq!(g.counts.iter().sum::<usize>(), g.best_iteration);
    }

    #[test]
    fn outputs_are_monotone_and_permutation_invariant((seed, m, items) in arb_case(), tying_ix in 0usize..11) {
        let t = task(2, &[0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, m, items, 1, &t);
        let cfg = FitOptions { optim: OptimConfig { max_steps: 50, ..OptimConfig::default() }, ..FitOptions::default() };
        let ts = fit_stacker(&StackerSpec::linear(Tying::ALL[tying_ix], Param::Positive), &data, &cfg).unwrap();
        let inputs = &data.windows[0].forecasts;
        let out = ts.combine(inputs).unwrap();
        prop_assert!(out.iter().all(QuantileForecast::is_monotone));

        let order: Vec<usize> = (0..m).rev().collect();
        let mut permuted = ts.clone();
        if let Payload::Weights(w) = &ts.payload {
            permuted.payload = Payload::Weights(w.permute_models(&order));
        }
        let out2 = permuted.combine(&inputs.permute_models(&order)).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn select_best_passes_through((seed, m, items) in arb_case()) {
        let t = task(2, &[0.1, 0.5, 0.9]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = random_data(&mut rng, m, items, 2, &t);
        let ts = fit("SelectBest", &data);
        let Payload::Choice(k) = ts.payload else { panic!() };
        let inputs = &data.windows[1].forecasts;
        for (i, f) in ts.combine(inputs).unwrap().iter().enumerate() {
            prop_assert_eq!(f, inputs.forecast(k, i));
        }
    }
}
