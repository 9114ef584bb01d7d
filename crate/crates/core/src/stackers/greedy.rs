//! Greedy forward selection with replacement.

use super::data::{FlatData, StackingData};
use crate::error::{Error, Result};
use crate::losses::pinball;

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyFit {
    pub weights: Vec<f64>,
    /// Selection counts at the best iteration.
    pub counts: Vec<usize>,
    pub best_iteration: usize,
    pub loss: f64,
    /// OOF loss after each iteration.
    pub trace: Vec<f64>,
}

/// Loss of `(sum + x_m) / j` over every record, without allocating.
fn candidate_loss(flat: &FlatData, sums: &[Vec<f64>], m: usize, j: f64) -> f64 {
    let nq = flat.n_quantiles();
    let block = flat.horizon * nq;
    let mut loss = 0.0;
    for (r, s) in flat.records.iter().zip(sums) {
        let mut total = 0.0;
        for (h, &y) in r.target.iter().enumerate() {
            for &q in &flat.scored {
                let c = h * nq + q;
                total += pinball((s[c] + r.inputs[m * block + c]) / j, y, flat.levels[q]);
            }
        }
        loss += total * r.weight;
    }
    loss
}

/// Runs `s` greedy steps and returns the weights of the best iteration.
pub fn fit_greedy(data: &StackingData, s: usize) -> Result<GreedyFit> {
    if s == 0 {
        return Err(Error::InvalidConfig("greedy selection needs S >= 1".into()));
    }
    let flat = FlatData::new(data)?;
    let n_models = flat.n_models;
    let block = flat.horizon * flat.n_quantiles();
    let mut sums = vec![vec![0.0; block]; flat.records.len()];
    let mut counts = vec![0usize; n_models];
    let mut best: Option<(f64, Vec<usize>, usize)> = None;
    let mut trace = Vec::with_capacity(s);

    for j in 1..=s {
        let mut pick = (0, f64::INFINITY);
        for m in 0..n_models {
            let l = candidate_loss(&flat, &sums, m, j as f64);
            if l < pick.1 {
                pick = (m, l);
            }
        }
        let (m, l) = pick;
        counts[m] += 1;
        for (r, sum) in flat.records.iter().zip(sums.iter_mut()) {
            for (c, v) in sum.iter_mut().enumerate() {
                *v += r.inputs[m * block + c];
            }
        }
        trace.push(l);
        if best.as_ref().is_none_or(|b| l < b.0) {
            best = Some((l, counts.clone(), j));
        }
    }
    let (loss, counts, best_iteration) = best.expect("at least one iteration");
    Ok(GreedyFit {
        weights: counts.iter().map(|&c| c as f64 / best_iteration as f64).collect(),
        counts,
        best_iteration,
        loss,
        trace,
    })
}
