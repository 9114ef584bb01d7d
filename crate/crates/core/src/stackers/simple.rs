//! Model averaging and model selection.

use super::data::StackingData;
use crate::error::Result;

/// Elementwise mean over models of one item's `[m][cell]` inputs.
pub(crate) fn mean_combine(inputs: &[f64], n_models: usize) -> Vec<f64> {
    let cells = inputs.len() / n_models;
    (0..cells)
        .map(|c| (0..n_models).map(|m| inputs[m * cells + c]).sum::<f64>() / n_models as f64)
        .collect()
}

/// Elementwise median over models; even counts average the middle pair.
pub(crate) fn median_combine(inputs: &[f64], n_models: usize) -> Vec<f64> {
    let cells = inputs.len() / n_models;
    let mut buf = vec![0.0; n_models];
    (0..cells)
        .map(|c| {
            for (m, b) in buf.iter_mut().enumerate() {
                *b = inputs[m * cells + c];
            }
            buf.sort_by(f64::total_cmp);
            let mid = n_models / 2;
            if n_models % 2 == 1 {
                buf[mid]
            } else {
                0.5 * (buf[mid - 1] + buf[mid])
            }
        })
        .collect()
}

/// Index of the model with the lowest OOF loss; the lowest index wins ties.
pub fn select_best(data: &StackingData) -> Result<(usize, Vec<f64>)> {
    let losses = data.model_losses()?;
    let mut best = 0;
    for (m, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = m;
        }
    }
    Ok((best, losses))
}
