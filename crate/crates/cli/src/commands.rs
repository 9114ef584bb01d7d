//! The batch subcommands. Each one reads its inputs from a run directory
//! and writes its artifacts back into it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use stackcast::cv::{holdout_split, leakage_check, run_backtest, BacktestOptions, OofStore};
use stackcast::evalreport::{leaderboard, read_records, write_records, EvalRecord, Leaderboard, ScoreGrid};
use stackcast::filter_min_length;
use stackcast::io::split_schema;

use crate::config::{Method, RunConfig};
use crate::pipeline::{fit_methods, FitOutcome};
use crate::store::{self, StoreLayout};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub kept: usize,
    pub dropped: usize,
}

fn dataset_name(cfg: &RunConfig, layout: &StoreLayout) -> String {
    cfg.dataset.clone().unwrap_or_else(|| {
        layout
            .root
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".into())
    })
}

/// Reads `item_id,timestamp,target` rows, drops series shorter than `8H`
/// and stores the panel. A previously stored panel is accepted as input.
pub fn cmd_ingest(input: &Path, cfg: &RunConfig, layout: &StoreLayout) -> Result<IngestSummary> {
    let task = cfg.task()?;
    let text = store::read_text(input)?;
    let stored = text.starts_with("#schema=");
    let body = if stored {
        split_schema(&text, store::PANEL_SCHEMA)?
    } else {
        text.as_str()
    };
    let panel = store::parse_observations(body, cfg.seasonality, &cfg.freq)
        .map_err(|e| match e.downcast::<stackcast::Error>() {
            // Parse errors count a schema line, which raw input lacks.
            Ok(stackcast::Error::Parse { line, message }) if !stored => stackcast::Error::Parse {
                line: line.saturating_sub(1),
                message,
            }
            .into(),
            Ok(other) => other.into(),
            Err(e) => e,
        })
        .with_context(|| format!("ingesting {}", input.display()))?;
    let total = panel.len();
    let kept = filter_min_length(panel, task.horizon())?;
    let summary = IngestSummary {
        kept: kept.len(),
        dropped: total - kept.len(),
    };
    store::write_panel(layout, &kept, &dataset_name(cfg, layout))?;
    Ok(summary)
}

/// Backtests the base learners on the panel minus its holdout window and
/// stores the out-of-fold forecasts, with holdout truth attached.
pub fn cmd_backtest(cfg: &RunConfig, layout: &StoreLayout) -> Result<OofStore> {
    let task = cfg.task()?;
    let (panel, dataset) = store::read_panel(layout)?;
    let split = holdout_split(&panel, task.horizon())?;
    let opts = BacktestOptions::default()
        .with_folds(cfg.folds)
        .with_seed(cfg.seed)
        .with_timing(cfg.timing);
    let mut bt = run_backtest(&split.train, &cfg.learners, &task, &opts)?;
    bt.store.attach_test_targets(&split)?;
    let violations = leakage_check(&bt.store);
    if !violations.is_empty() {
        bail!("leakage check failed: {violations:?}");
    }
    store::write_store(layout, &bt.store, &dataset)?;
    Ok(bt.store)
}

/// Replaces records sharing a key with `new` and appends the rest.
fn merge_records(mut old: Vec<EvalRecord>, new: Vec<EvalRecord>) -> Vec<EvalRecord> {
    for r in new {
        match old
            .iter_mut()
            .find(|o| o.method == r.method && o.dataset == r.dataset && o.metric == r.metric)
        {
            Some(slot) => *slot = r,
            None => old.push(r),
        }
    }
    old
}

fn fit_and_store(cfg: &RunConfig, layout: &StoreLayout, methods: &[Method]) -> Result<FitOutcome> {
    let (store, dataset) = store::read_store(layout)?;
    let out = fit_methods(&store, methods, &cfg.l2, cfg.l2_retrain, &cfg.fit_options(), &dataset)?;
    for s in &out.singles {
        store::write_stacker(layout, &store::slug(&s.name()), s)?;
    }
    if let Some((_, first)) = out.layers.first() {
        for s in &first.l2 {
            store::write_stacker(layout, &format!("l2_{}", store::slug(&s.name())), s)?;
        }
        for (name, ens) in &out.layers {
            store::write_stacker(layout, &format!("l3_{}", store::slug(name)), &ens.l3)?;
        }
        let named: Vec<(String, &_)> = out.layers.iter().map(|(n, l)| (n.clone(), l)).collect();
        store::atomic_write(&layout.file("l3_weights.csv"), &store::l3_weights_bytes(&named)?)?;
        store::atomic_write(&layout.file("provenance.csv"), &store::provenance_bytes(&named)?)?;
        store::atomic_write(&layout.file("l3_rows.csv"), &store::l3_rows_bytes(first)?)?;
    }
    let path = layout.records();
    let old = if path.exists() {
        read_records(&store::read_text(&path)?)?
    } else {
        Vec::new()
    };
    let merged = merge_records(old, out.records.clone());
    let mut buf = Vec::new();
    write_records(&mut buf, &merged)?;
    store::atomic_write(&path, &buf)?;
    Ok(out)
}

/// Fits the configured methods on all validation windows and scores them on
/// the holdout window.
pub fn cmd_fit(cfg: &RunConfig, layout: &StoreLayout) -> Result<FitOutcome> {
    fit_and_store(cfg, layout, &cfg.methods())
}

/// Fits one multi-layer ensemble per configured L3 aggregator.
pub fn cmd_fit_multilayer(cfg: &RunConfig, layout: &StoreLayout) -> Result<FitOutcome> {
    if cfg.folds < 2 {
        return Err(stackcast::Error::InsufficientFolds(cfg.folds).into());
    }
    let methods: Vec<Method> = cfg.l3.iter().map(|k| Method::Layered(*k)).collect();
    fit_and_store(cfg, layout, &methods)
}

fn per_dataset_table(records: &[EvalRecord]) -> Result<String> {
    let grid = ScoreGrid::new(records)?;
    let mut out = String::from("| Method |");
    for t in &grid.tasks {
        out.push_str(&format!(" {t} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(grid.tasks.len()));
    out.push('\n');
    for (m, name) in grid.methods.iter().enumerate() {
        out.push_str(&format!("| {name} |"));
        for row in &grid.values {
            out.push_str(&format!(" {:.4} |", row[m]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Aggregates record files into `report.md` and `leaderboard.csv`.
pub fn cmd_report(inputs: &[PathBuf], baseline: &str, layout: &StoreLayout) -> Result<Leaderboard> {
    let mut records = Vec::new();
    for path in inputs {
        records.extend(read_records(&store::read_text(path)?).with_context(|| format!("reading {}", path.display()))?);
    }
    let board = leaderboard(&records, baseline)?;
    let markdown = format!(
        "# Leaderboard\n\n{}\n## Holdout loss per dataset\n\n{}",
        board.to_markdown(),
        per_dataset_table(&records)?
    );
    store::atomic_write(&layout.file("report.md"), &store::report_bytes(&markdown))?;
    store::atomic_write(&layout.file("leaderboard.csv"), board.to_csv().as_bytes())?;
    Ok(board)
}
