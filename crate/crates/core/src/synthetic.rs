//! Seeded synthetic panels with regimes that favour different base learners.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::series::{TimeSeries, TimeSeriesPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Stable seasonal pattern plus noise.
    Seasonal,
    /// Linear trend plus noise, with mild seasonality when `m > 1`.
    Trend,
    /// Gaussian random walk.
    RandomWalk,
    /// Stationary second-order autoregression.
    Ar2,
    /// Constant level with shifts and heavy noise.
    LevelNoise,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Seasonal => "seasonal",
            Regime::Trend => "trend",
            Regime::RandomWalk => "randomwalk",
            Regime::Ar2 => "ar2",
            Regime::LevelNoise => "levelnoise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub name: String,
    pub regime: Regime,
    pub n_items: usize,
    pub length: usize,
    pub seasonality: usize,
    pub horizon: usize,
    pub seed: u64,
}

fn generate_item(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = spec.length;
    let m = spec.seasonality.max(1);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let level = rng.random_range(20.0..80.0);
    let pattern: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut e = || noise.sample(&mut *rng);
    let mut out = Vec::with_capacity(n);
    match spec.regime {
        Regime::Seasonal => {
            let amp = 10.0;
            for t in 0..n {
                out.push(level + amp * pattern[t % m] + 1.5 * e());
            }
        }
        Regime::Trend => {
            let slope = 0.8 * if level > 50.0 { 1.0 } else { -0.5 };
            for t in 0..n {
                out.push(level + slope * t as f64 + 3.0 * pattern[t % m] + 1.0 * e());
            }
        }
        Regime::RandomWalk => {
            let mut y = level;
            for _ in 0..n {
                y += 2.0 * e();
                out.push(y);
            }
        }
        Regime::Ar2 => {
            let (a1, a2) = (1.2, -0.5);
            let (mut y1, mut y2) = (0.0, 0.0);
            for _ in 0..n + 20 {
                let y = a1 * y1 + a2 * y2 + 2.0 * e();
                y2 = y1;
                y1 = y;
                out.push(level + y);
            }
            out.drain(..20);
        }
        Regime::LevelNoise => {
            let mut shift = 0.0;
            for t in 0..n {
                if t > 0 && t % (n / 3).max(1) == 0 {
                    shift += 3.0 * e();
                }
                out.push(level + shift + 5.0 * e());
            }
        }
    }
    out
}

/// A panel of `n_items` series of one regime.
pub fn generate(spec: &SyntheticSpec) -> TimeSeriesPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let series = (0..spec.n_items)
        .map(|i| TimeSeries::new(format!("{}_{i:03}", spec.name), 0, 1, generate_item(spec, &mut rng)))
        .collect();
    TimeSeriesPanel::new(series, spec.seasonality.max(1), "synthetic")
}

/// The ten datasets of the directional study: 20 items each, length `12H`
/// including the holdout window, mixing regimes and seasonalities.
pub fn study_specs(seed: u64) -> Vec<SyntheticSpec> {
    let layout: [(Regime, usize, usize); 10] = [
        (Regime::Seasonal, 12, 6),
        (Regime::Seasonal, 4, 8),
        (Regime::Trend, 1, 6),
        (Regime::Trend, 6, 6),
        (Regime::RandomWalk, 1, 8),
        (Regime::RandomWalk, 4, 6),
        (Regime::Ar2, 1, 6),
        (Regime::Ar2, 6, 8),
        (Regime::LevelNoise, 1, 6),
        (Regime::LevelNoise, 12, 6),
    ];
    layout
        .iter()
        .enumerate()
        .map(|(k, &(regime, m, h))| SyntheticSpec {
            name: format!("{regime}_m{m}"),
            regime,
            n_items: 20,
            length: 12 * h,
            seasonality: m,
            horizon: h,
            seed: seed.wrapping_add(k as u64 * 7919),
        })
        .collect()
}
