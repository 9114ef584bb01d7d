//! Line-oriented CSV formats shared between the backtest store and external
//! forecast imports.
//!
//! Every file starts with a single schema line `#schema=<name>/<version>`,
//! followed by a CSV header and data rows. Floats are written with Rust's
//! shortest round-trip representation, so a write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::series::QuantileForecast;

/// Schema tag of forecast record files.
pub const FORECAST_SCHEMA: &str = "stackcast.forecasts/1";
/// Header of forecast record files.
pub const FORECAST_HEADER: [&str; 7] = ["item_id", "fold", "model", "origin_t", "h", "q", "value"];

/// Identifies a validation window (1-based) or the holdout test window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FoldId {
    Window(usize),
    Test,
}

impl fmt::Display for FoldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldId::Window(k) => write!(f, "{k}"),
            FoldId::Test => f.write_str("test"),
        }
    }
}

impl FromStr for FoldId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "test" => Ok(FoldId::Test),
            other => other
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .map(FoldId::Window)
                .ok_or_else(|| Error::SchemaMismatch(format!("invalid fold `{other}`"))),
        }
    }
}

/// Writes the schema line.
pub fn write_schema<W: Write>(out: &mut W, schema: &str) -> Result<()> {
    writeln!(out, "#schema={schema}")?;
    Ok(())
}

/// Splits a file into its schema line and the remainder, rejecting any
/// schema other than `expected`.
pub fn split_schema<'a>(text: &'a str, expected: &str) -> Result<&'a str> {
    let (first, rest) = match text.find('\n') {
        Some(pos) => (&text[..pos], &text[pos + 1..]),
        None => (text, ""),
    };
    let found = first.trim_end_matches('\r').strip_prefix("#schema=").unwrap_or("");
    if found != expected {
        return Err(Error::SchemaVersion {
            found: first.trim().to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(rest)
}

/// Reads a whole file from a buffered reader and checks its schema line.
pub fn read_with_schema<R: BufRead>(mut input: R, expected: &str) -> Result<String> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    split_schema(&text, expected).map(str::to_string)
}

/// CSV reader over the body of a schema-tagged file. Line numbers reported
/// in errors count the schema line.
pub fn csv_reader(body: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes())
}

pub(crate) fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::SchemaMismatch(format!(
            "expected columns {}, found {}",
            expected.join(","),
            found.join(",")
        )));
    }
    Ok(())
}

/// Parses one CSV field, reporting the file line on failure.
pub fn parse_field<T: FromStr>(record: &csv::StringRecord, index: usize, what: &str) -> Result<T> {
    let line = record.position().map(|p| p.line() as usize + 1).unwrap_or_default();
    let raw = record.get(index).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing field `{what}`"),
    })?;
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {what} `{raw}`"),
    })
}

/// One forecast together with the fold and model it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastEntry {
    pub fold: FoldId,
    pub model: String,
    pub forecast: QuantileForecast,
}

/// Writes forecast records, one row per `(h, q)` cell.
pub fn write_forecasts<W: Write>(out: &mut W, entries: &[ForecastEntry], levels: &[f64]) -> Result<()> {
    write_schema(out, FORECAST_SCHEMA)?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(FORECAST_HEADER)?;
    for entry in entries {
        let f = &entry.forecast;
        let fold = entry.fold.to_string();
        let origin = f.origin_t.to_string();
        for h in 0..f.horizon() {
            let step = (h + 1).to_string();
            for (q, level) in levels.iter().enumerate() {
                writer.write_record([
                    f.item_id.as_str(),
                    fold.as_str(),
                    entry.model.as_str(),
                    origin.as_str(),
                    step.as_str(),
                    &level.to_string(),
                    &f.get(h, q).to_string(),
                ])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads forecast records and regroups them into `H x Q` forecasts.
///
/// Entries come back in first-appearance order of `(fold, model, item)`.
pub fn read_forecasts(text: &str, horizon: usize, levels: &[f64]) -> Result<Vec<ForecastEntry>> {
    let body = split_schema(text, FORECAST_SCHEMA)?;
    let mut reader = csv_reader(body);
    check_header(reader.headers()?, &FORECAST_HEADER)?;

    type Key = (FoldId, String, String);
    let mut order: Vec<Key> = Vec::new();
    let mut cells: BTreeMap<Key, (usize, BTreeMap<(usize, usize), f64>)> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let item: String = parse_field(&record, 0, "item_id")?;
        let fold: FoldId = parse_field(&record, 1, "fold")?;
        let model: String = parse_field(&record, 2, "model")?;
        let origin: usize = parse_field(&record, 3, "origin_t")?;
        let h: usize = parse_field(&record, 4, "h")?;
        let level: f64 = parse_field(&record, 5, "q")?;
        let value: f64 = parse_field(&record, 6, "value")?;
        let q = levels
            .iter()
            .position(|&l| l == level)
            .ok_or_else(|| Error::ShapeMismatch(format!("item `{item}`: quantile level {level} is not in the task")))?;
        if h == 0 || h > horizon {
            return Err(Error::ShapeMismatch(format!(
                "item `{item}`: step {h} outside horizon {horizon}"
            )));
        }
        let key = (fold, model, item);
        let entry = cells.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (origin, BTreeMap::new())
        });
        if entry.0 != origin {
            return Err(Error::SchemaMismatch(format!(
                "item `{}`: conflicting origins {} and {origin}",
                key.2, entry.0
            )));
        }
        if entry.1.insert((h - 1, q), value).is_some() {
            return Err(Error::SchemaMismatch(format!(
                "item `{}`: duplicate cell h={h} q={level}",
                key.2
            )));
        }
    }

    let nq = levels.len();
    order
        .into_iter()
        .map(|key| {
            let (origin, grid) = cells.remove(&key).expect("key recorded");
            if grid.len() != horizon * nq {
                let quantiles: std::collections::BTreeSet<usize> = grid.keys().map(|k| k.1).collect();
                return Err(Error::ShapeMismatch(format!(
                    "item `{}` fold {} model `{}`: {} cells over {} quantile levels, expected {horizon}x{nq}",
                    key.2,
                    key.0,
                    key.1,
                    grid.len(),
                    quantiles.len()
                )));
            }
            let values = grid.into_values().collect();
            let forecast = QuantileForecast::new(key.2, origin, horizon, nq, values)?;
            Ok(ForecastEntry {
                fold: key.0,
                model: key.1,
                forecast,
            })
        })
        .collect()
}
