//! Run configuration: a flat `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma separated; commas inside parentheses belong to the entry, so
//! `stackers = Median, Linear(mq,softmax)` has two entries.
//!
//! | key | default |
//! |---|---|
//! | `dataset` | name of the output directory |
//! | `horizon` | required |
//! | `quantiles` | `deciles` (0.1, ..., 0.9) |
//! | `metric` | `sql` (`mase` for point forecasts) |
//! | `seasonality` | `1` |
//! | `freq` | `1` |
//! | `folds` | `5` |
//! | `seed` | `0` |
//! | `learners` | `defaults` (`reduced`, or a list) |
//! | `stackers` | `representatives` (`portfolio14`, or a list) |
//! | `l2` | `portfolio14` (or a list) |
//! | `l3` | `SelectBest, Greedy(100)` |
//! | `l2_retrain` | `true` |
//! | `timing` | `wall` (`off` records zero fit times) |
//! | `lr0`, `max_steps`, `time_limit`, `plateau_patience`, `plateau_factor`, `rel_tol` | optimizer defaults |
//! | `tabular_max_steps` | `1000` |

use std::fmt;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use stackcast::baselearners::BaseLearnerSpec;
use stackcast::multilayer::{portfolio14, L3Kind};
use stackcast::optim::OptimConfig;
use stackcast::stackers::{FitOptions, HKind, Param, StackerSpec, TabularKind, Tying};
use stackcast::timing::Timing;
use stackcast::{EvalLoss, ForecastTask};

/// A method row of the results table: a single stacker or a multi-layer
/// ensemble identified by its L3 aggregator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Single(StackerSpec),
    Layered(L3Kind),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Single(s) => s.fmt(f),
            Method::Layered(k) => f.write_str(k.method_name()),
        }
    }
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "StackerSelection" => Ok(Method::Layered(L3Kind::SelectBest)),
            "MultiLayer" => Ok(Method::Layered(L3Kind::DEFAULT_GREEDY)),
            other => Ok(Method::Single(other.parse()?)),
        }
    }
}

/// One method per category: simple average, model selection, performance
/// weighting, greedy selection, linear, nonlinear, and the two multi-layer
/// variants.
pub fn representatives(metric: EvalLoss) -> Vec<Method> {
    let linear = match metric {
        EvalLoss::Sql => Tying::Mq,
        EvalLoss::Mase => Tying::M,
    };
    vec![
        Method::Single(StackerSpec::Median),
        Method::Single(StackerSpec::SelectBest),
        Method::Single(StackerSpec::PerfWeighted(HKind::Exp)),
        Method::Single(StackerSpec::Greedy(100)),
        Method::Single(StackerSpec::linear(linear, Param::Softmax)),
        Method::Single(StackerSpec::Tabular {
            kind: TabularKind::Tabular,
            scaled: true,
        }),
        Method::Layered(L3Kind::SelectBest),
        Method::Layered(L3Kind::DEFAULT_GREEDY),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<String>,
    pub horizon: Option<usize>,
    pub quantiles: Vec<f64>,
    pub metric: EvalLoss,
    pub seasonality: usize,
    pub freq: String,
    pub folds: usize,
    pub seed: u64,
    pub learners: Vec<BaseLearnerSpec>,
    /// `None` means the representatives preset for the configured metric.
    pub stackers: Option<Vec<Method>>,
    pub l2: Vec<StackerSpec>,
    pub l3: Vec<L3Kind>,
    pub l2_retrain: bool,
    pub timing: Timing,
    pub optim: OptimConfig,
    pub tabular_max_steps: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            horizon: None,
            quantiles: ForecastTask::deciles(),
            metric: EvalLoss::Sql,
            seasonality: 1,
            freq: "1".into(),
            folds: stackcast::cv::DEFAULT_FOLDS,
            seed: 0,
            learners: BaseLearnerSpec::defaults(),
            stackers: None,
            l2: portfolio14(),
            l3: vec![L3Kind::SelectBest, L3Kind::DEFAULT_GREEDY],
            l2_retrain: true,
            timing: Timing::Wall,
            optim: OptimConfig::default(),
            tabular_max_steps: None,
        }
    }
}

/// Splits on commas outside parentheses.
pub fn split_list(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(c);
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items = split_list(value);
    if items.is_empty() {
        bail!("empty list");
    }
    items
        .iter()
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("{e}")))
        .collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => bail!("expected true or false, got `{other}`"),
    }
}

fn parse_num<T: FromStr>(value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("invalid number `{value}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}: key `{}`", n + 1, key.trim()))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "horizon" => self.horizon = Some(parse_num(value)?),
            "quantiles" => {
                self.quantiles = if value == "deciles" {
                    ForecastTask::deciles()
                } else {
                    parse_list(value)?
                }
            }
            "metric" => self.metric = value.parse()?,
            "seasonality" => self.seasonality = parse_num(value)?,
            "freq" => self.freq = value.to_string(),
            "folds" => self.folds = parse_num(value)?,
            "seed" => self.seed = parse_num(value)?,
            "learners" => {
                self.learners = match value {
                    "defaults" => BaseLearnerSpec::defaults(),
                    "reduced" => BaseLearnerSpec::reduced(),
                    _ => parse_list(value)?,
                }
            }
            "stackers" => {
                self.stackers = match value {
                    "representatives" => None,
                    "portfolio14" => Some(portfolio14().into_iter().map(Method::Single).collect()),
                    _ => Some(parse_list(value)?),
                }
            }
            "l2" => {
                self.l2 = match value {
                    "portfolio14" => portfolio14(),
                    _ => parse_list(value)?,
                }
            }
            "l3" => self.l3 = parse_list(value)?,
            "l2_retrain" => self.l2_retrain = parse_bool(value)?,
            "timing" => self.timing = value.parse()?,
            "lr0" => self.optim.lr0 = parse_num(value)?,
            "max_steps" => self.optim.max_steps = parse_num(value)?,
            "time_limit" => self.optim.time_limit = parse_num(value)?,
            "plateau_patience" => self.optim.plateau_patience = parse_num(value)?,
            "plateau_factor" => self.optim.plateau_factor = parse_num(value)?,
            "rel_tol" => self.optim.rel_tol = parse_num(value)?,
            "tabular_max_steps" => self.tabular_max_steps = Some(parse_num(value)?),
            other => bail!("unknown key `{other}`"),
        }
        Ok(())
    }

    pub fn task(&self) -> Result<ForecastTask> {
        let h = self.horizon.ok_or_else(|| anyhow!("config is missing `horizon`"))?;
        Ok(ForecastTask::new(h, self.quantiles.clone(), self.metric)?)
    }

    pub fn methods(&self) -> Vec<Method> {
        self.stackers.clone().unwrap_or_else(|| representatives(self.metric))
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            optim: OptimConfig {
                seed: self.seed,
                ..self.optim.clone()
            },
            tabular_max_steps: self.tabular_max_steps,
            timing: self.timing,
        }
    }
}
