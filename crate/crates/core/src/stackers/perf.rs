//! Weights derived from each model's normalized OOF loss.

use std::fmt;
use std::str::FromStr;

use super::data::StackingData;
use crate::error::{Error, Result};

/// Upper bound on `1/L` before exponentiation.
pub const EXP_INPUT_CAP: f64 = 700.0;

/// Map from a normalized loss to an unnormalized weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HKind {
    /// `1 / L`
    Inv,
    /// `1 / L^2`
    Sqr,
    /// `exp(1 / L)`
    Exp,
}

impl fmt::Display for HKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HKind::Inv => "inv",
            HKind::Sqr => "sqr",
            HKind::Exp => "exp",
        })
    }
}

impl FromStr for HKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inv" => Ok(HKind::Inv),
            "sqr" => Ok(HKind::Sqr),
            "exp" => Ok(HKind::Exp),
            other => Err(Error::InvalidConfig(format!("unknown weight function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfWeights {
    pub weights: Vec<f64>,
    /// Set when some model had zero loss; the weight is then spread evenly
    /// over the zero-loss models.
    pub degenerate: bool,
}

/// Weights from raw per-model losses.
pub fn weights_from_losses(losses: &[f64], kind: HKind) -> Result<PerfWeights> {
    if losses.is_empty() || losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidConfig(
            "model losses must be finite and non-negative".into(),
        ));
    }
    let zero: Vec<bool> = losses.iter().map(|&l| l == 0.0).collect();
    if zero.iter().any(|&z| z) {
        let n = zero.iter().filter(|&&z| z).count() as f64;
        return Ok(PerfWeights {
            weights: zero.iter().map(|&z| if z { 1.0 / n } else { 0.0 }).collect(),
            degenerate: true,
        });
    }
    let total: f64 = losses.iter().sum();
    let inv: Vec<f64> = losses.iter().map(|l| total / l).collect();
    let raw: Vec<f64> = match kind {
        HKind::Inv => inv,
        HKind::Sqr => inv.iter().map(|x| x * x).collect(),
        HKind::Exp => {
            let capped: Vec<f64> = inv.iter().map(|x| x.min(EXP_INPUT_CAP)).collect();
            let max = capped.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            capped.iter().map(|x| (x - max).exp()).collect()
        }
    };
    let sum: f64 = raw.iter().sum();
    Ok(PerfWeights {
        weights: raw.iter().map(|r| r / sum).collect(),
        degenerate: false,
    })
}

pub fn fit_performance_weights(data: &StackingData, kind: HKind) -> Result<PerfWeights> {
    weights_from_losses(&data.model_losses()?, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn hand_computed_weights() {
        // Normalized losses (0.25, 0.75): h_inv gives (4, 4/3), h_sqr (16, 16/9).
        let inv = weights_from_losses(&[1.0, 3.0], HKind::Inv).unwrap();
        assert!(close(&inv.weights, &[0.75, 0.25]));
        let sqr = weights_from_losses(&[1.0, 3.0], HKind::Sqr).unwrap();
        assert!(close(&sqr.weights, &[0.9, 0.1]));
        let e = weights_from_losses(&[1.0, 3.0], HKind::Exp).unwrap();
        let (a, b) = (4f64.exp(), (4.0f64 / 3.0).exp());
        assert!(close(&e.weights, &[a / (a + b), b / (a + b)]));
    }

    #[test]
    fn equal_losses_are_uniform() {
        for kind in [HKind::Inv, HKind::Sqr, HKind::Exp] {
            let w = weights_from_losses(&[2.0; 4], kind).unwrap();
            assert!(close(&w.weights, &[0.25; 4]));
        }
    }

    #[test]
    fn tiny_losses_do_not_overflow() {
        let w = weights_from_losses(&[1e-12, 1.0, 1.0], HKind::Exp).unwrap();
        assert!(w.weights.iter().all(|x| x.is_finite()));
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_is_degenerate() {
        let w = weights_from_losses(&[0.0, 1.0, 0.0], HKind::Inv).unwrap();
        assert!(w.degenerate);
        assert_eq!(w.weights, vec![0.5, 0.0, 0.5]);
    }
}
