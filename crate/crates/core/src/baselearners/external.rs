use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_forecasts, FoldId, ForecastEntry};
use crate::series::{ForecastTask, ModelForecastSet, QuantileForecast};

/// Forecasts produced outside this crate, keyed by `(item, origin_t)`.
#[derive(Debug, Clone)]
pub struct ExternalForecasts {
    entries: Vec<ForecastEntry>,
    by_origin: HashMap<(String, String, usize), usize>,
}

impl ExternalForecasts {
    fn from_entries(entries: Vec<ForecastEntry>) -> Self {
        let by_origin = entries
            .iter()
            .enumerate()
            .map(|(k, e)| ((e.model.clone(), e.forecast.item_id.clone(), e.forecast.origin_t), k))
            .collect();
        Self { entries, by_origin }
    }

    pub fn entries(&self) -> &[ForecastEntry] {
        &self.entries
    }

    pub fn models(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.model) {
                seen.push(e.model.clone());
            }
        }
        seen
    }

    /// Restricts to one model. A single-model file matches any name.
    pub fn for_model(&self, name: &str) -> Result<Self> {
        let models = self.models();
        let keep = if models.iter().any(|m| m == name) {
            name.to_string()
        } else if models.len() == 1 {
            models[0].clone()
        } else {
            return Err(Error::SchemaMismatch(format!(
                "external file has no model `{name}` (found {})",
                models.join(", ")
            )));
        };
        Ok(Self::from_entries(
            self.entries.iter().filter(|e| e.model == keep).cloned().collect(),
        ))
    }

    /// The forecast of the (single) model for `item` issued after
    /// `origin_t` observations.
    pub fn lookup(&self, item: &str, origin_t: usize) -> Result<&QuantileForecast> {
        let model = self.entries.first().map(|e| e.model.clone()).unwrap_or_default();
        self.by_origin
            .get(&(model, item.to_string(), origin_t))
            .map(|&k| &self.entries[k].forecast)
            .ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "external forecasts have no record for item `{item}` at origin {origin_t}"
                ))
            })
    }

    /// All models' forecasts for one fold, in file order.
    pub fn forecast_set(&self, fold: FoldId) -> Result<ModelForecastSet> {
        let models = self.models();
        let forecasts = models
            .iter()
            .map(|m| {
                self.entries
                    .iter()
                    .filter(|e| &e.model == m && e.fold == fold)
                    .map(|e| e.forecast.clone())
                    .collect()
            })
            .collect();
        ModelForecastSet::new(models, forecasts)
    }
}

/// Reads an external forecast file and checks it covers every expected item.
pub fn import_external(path: &Path, task: &ForecastTask, expected_items: &[String]) -> Result<ExternalForecasts> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ExternalFileMissing(path.display().to_string()),
        _ => Error::Io(e.to_string()),
    })?;
    parse_external(&text, task, expected_items)
}

pub(crate) fn parse_external(text: &str, task: &ForecastTask, expected_items: &[String]) -> Result<ExternalForecasts> {
    let entries = read_forecasts(text, task.horizon(), task.quantiles())?;
    let present: BTreeSet<&str> = entries.iter().map(|e| e.forecast.item_id.as_str()).collect();
    let missing: Vec<&str> = expected_items
        .iter()
        .map(String::as_str)
        .filter(|i| !present.contains(i))
        .collect();
    if !missing.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "external forecasts are missing items: {}",
            missing.join(", ")
        )));
    }
    Ok(ExternalForecasts::from_entries(entries))
}
