//! On-disk layout of a run directory.
//!
//! ```text
//! <run>/panel.csv            item_id,timestamp,target
//! <run>/dataset.csv          name, seasonality, frequency label
//! <run>/oof/meta.csv         folds, task, model order, seed
//! <run>/oof/items.csv        training length per item
//! <run>/oof/fold_<k>.csv     base forecasts on window k
//! <run>/oof/fold_test.csv    base forecasts on the holdout window
//! <run>/oof/targets.csv      item_id,fold,h,value
//! <run>/oof/scales.csv       item_id,fold,scale
//! <run>/oof/fit_times.csv    model,fold,seconds
//! <run>/oof/skipped.csv      fold,item_id
//! <run>/stackers/*.csv       fitted combiners
//! <run>/records.csv          holdout scores
//! <run>/l3_weights.csv       L3 weight per L2 stacker
//! <run>/provenance.csv       per-L2 training summary of each ensemble
//! <run>/l3_rows.csv          rows the L3 aggregators were trained on
//! <run>/report.md, leaderboard.csv
//! ```
//!
//! Every file starts with a schema line and is written atomically.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use stackcast::cv::{FitTime, OofMeta, OofStore, WindowRecord};
use stackcast::io::{csv_reader, read_forecasts, split_schema, write_forecasts, write_schema, FoldId, ForecastEntry};
use stackcast::multilayer::StackLayers;
use stackcast::stackers::{Mlp, Payload, TabularModel, TrainedStacker, WeightTensor};
use stackcast::{Error, ForecastTask, ModelForecastSet, TimeSeries, TimeSeriesPanel};

pub const PANEL_SCHEMA: &str = "stackcast.panel/1";
pub const DATASET_SCHEMA: &str = "stackcast.dataset/1";
pub const OOF_META_SCHEMA: &str = "stackcast.oof-meta/1";
pub const ITEMS_SCHEMA: &str = "stackcast.items/1";
pub const TARGETS_SCHEMA: &str = "stackcast.targets/1";
pub const SCALES_SCHEMA: &str = "stackcast.scales/1";
pub const FIT_TIMES_SCHEMA: &str = "stackcast.fit-times/1";
pub const SKIPPED_SCHEMA: &str = "stackcast.skipped/1";
pub const STACKER_SCHEMA: &str = "stackcast.stacker/1";
pub const L3_WEIGHTS_SCHEMA: &str = "stackcast.l3-weights/1";
pub const PROVENANCE_SCHEMA: &str = "stackcast.provenance/1";
pub const L3_ROWS_SCHEMA: &str = "stackcast.l3-rows/1";
pub const REPORT_SCHEMA: &str = "stackcast.report/1";

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct StoreLayout {
    pub root: PathBuf,
}

impl StoreLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn panel(&self) -> PathBuf {
        self.root.join("panel.csv")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.csv")
    }

    pub fn oof(&self) -> PathBuf {
        self.root.join("oof")
    }

    pub fn stackers(&self) -> PathBuf {
        self.root.join("stackers")
    }

    pub fn records(&self) -> PathBuf {
        self.root.join("records.csv")
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// A CSV document with a schema line and a header.
fn table<S: AsRef<str>>(schema: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_schema(&mut out, schema)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row.iter().map(AsRef::as_ref))?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Parses a table written by [`table`], checking the schema and header.
fn read_table(text: &str, schema: &str, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let body = split_schema(text, schema)?;
    let mut reader = csv_reader(body);
    let found: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if found != header {
        return Err(Error::SchemaMismatch(format!(
            "expected columns {}, found {}",
            header.join(","),
            found.join(",")
        ))
        .into());
    }
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, what: &str) -> Result<T> {
    Ok(stackcast::io::parse_field(row, idx, what)?)
}

fn kv_rows(text: &str, schema: &str) -> Result<Vec<(String, String)>> {
    Ok(read_table(text, schema, &["key", "value"])?
        .iter()
        .map(|r| (r[0].to_string(), r[1].to_string()))
        .collect())
}

fn kv_get<'a>(rows: &'a [(String, String)], key: &str) -> Result<&'a str> {
    rows.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| anyhow!("missing key `{key}`"))
}

fn kv_all<'a>(rows: &'a [(String, String)], key: &str) -> Vec<&'a str> {
    rows.iter().filter(|(k, _)| k == key).map(|(_, v)| v.as_str()).collect()
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|v| v.parse().map_err(|_| anyhow!("invalid number `{v}`")))
        .collect()
}

// Panels.

pub const OBSERVATION_HEADER: [&str; 3] = ["item_id", "timestamp", "target"];

/// Parses `item_id,timestamp,target` rows into regularly spaced series, in
/// first-appearance order of items. Integer timestamps are required.
pub fn parse_observations(body: &str, seasonality: usize, freq: &str) -> Result<TimeSeriesPanel> {
    let mut reader = csv_reader(body);
    let found: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if found != OBSERVATION_HEADER {
        bail!(Error::SchemaMismatch(format!(
            "expected columns item_id,timestamp,target, found {}",
            found.join(",")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut points: BTreeMap<String, Vec<(i64, f64)>> = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let item: String = field(&row, 0, "item_id")?;
        let ts: i64 = field(&row, 1, "timestamp")?;
        let y: f64 = field(&row, 2, "target")?;
        points
            .entry(item.clone())
            .or_insert_with(|| {
                order.push(item);
                Vec::new()
            })
            .push((ts, y));
    }
    let mut series = Vec::with_capacity(order.len());
    for item in order {
        let mut obs = points.remove(&item).expect("item recorded");
        obs.sort_by_key(|p| p.0);
        let step = if obs.len() > 1 { obs[1].0 - obs[0].0 } else { 1 };
        if step <= 0 || obs.windows(2).any(|w| w[1].0 - w[0].0 != step) {
            bail!("irregular spacing in item `{item}`");
        }
        let start = obs[0].0;
        series.push(TimeSeries::new(
            item,
            start,
            step,
            obs.into_iter().map(|p| p.1).collect(),
        ));
    }
    Ok(stackcast::validate_panel(TimeSeriesPanel::new(
        series,
        seasonality,
        freq,
    ))?)
}

fn panel_rows(panel: &TimeSeriesPanel) -> Vec<Vec<String>> {
    panel
        .series
        .iter()
        .flat_map(|s| {
            s.values.iter().enumerate().map(move |(t, y)| {
                vec![
                    s.item_id.clone(),
                    (s.start_time + t as i64 * s.step).to_string(),
                    y.to_string(),
                ]
            })
        })
        .collect()
}

pub fn write_panel(layout: &StoreLayout, panel: &TimeSeriesPanel, name: &str) -> Result<()> {
    atomic_write(
        &layout.panel(),
        &table(PANEL_SCHEMA, &OBSERVATION_HEADER, panel_rows(panel))?,
    )?;
    let meta = vec![
        vec!["name".to_string(), name.to_string()],
        vec!["seasonality".into(), panel.seasonality.to_string()],
        vec!["freq".into(), panel.freq_label.clone()],
    ];
    atomic_write(&layout.dataset(), &table(DATASET_SCHEMA, &["key", "value"], meta)?)
}

/// The stored panel and its dataset name.
pub fn read_panel(layout: &StoreLayout) -> Result<(TimeSeriesPanel, String)> {
    let meta = kv_rows(&read_text(&layout.dataset())?, DATASET_SCHEMA)?;
    let seasonality = kv_get(&meta, "seasonality")?.parse()?;
    let text = read_text(&layout.panel())?;
    let body = split_schema(&text, PANEL_SCHEMA)?;
    let panel = parse_observations(body, seasonality, kv_get(&meta, "freq")?)?;
    Ok((panel, kv_get(&meta, "name")?.to_string()))
}

// Out-of-fold stores.

fn fold_file(fold: FoldId) -> String {
    format!("fold_{fold}.csv")
}

fn window_entries(w: &WindowRecord) -> Vec<ForecastEntry> {
    let set = &w.forecasts;
    (0..set.n_models())
        .flat_map(|m| {
            set.model_forecasts(m).iter().map(move |f| ForecastEntry {
                fold: w.fold,
                model: set.model_ids()[m].clone(),
                forecast: f.clone(),
            })
        })
        .collect()
}

pub fn write_store(layout: &StoreLayout, store: &OofStore, dataset: &str) -> Result<()> {
    let dir = layout.oof();
    let m = &store.meta;
    let mut meta = vec![
        vec!["dataset".to_string(), dataset.to_string()],
        vec!["folds".into(), m.folds.to_string()],
        vec!["horizon".into(), m.task.horizon().to_string()],
        vec!["quantiles".into(), join_floats(m.task.quantiles())],
        vec!["metric".into(), m.task.eval_loss().to_string()],
        vec!["seasonality".into(), m.seasonality.to_string()],
        vec!["min_train".into(), m.min_train.to_string()],
        vec!["seed".into(), m.seed.to_string()],
    ];
    meta.extend(m.model_ids.iter().map(|id| vec!["model".to_string(), id.clone()]));
    atomic_write(&dir.join("meta.csv"), &table(OOF_META_SCHEMA, &["key", "value"], meta)?)?;
    atomic_write(
        &dir.join("items.csv"),
        &table(
            ITEMS_SCHEMA,
            &["item_id", "length"],
            store.items.iter().map(|(id, n)| vec![id.clone(), n.to_string()]),
        )?,
    )?;

    let mut targets = Vec::new();
    let mut scales = Vec::new();
    for w in store.windows.iter().chain(store.test.iter()) {
        let mut buf = Vec::new();
        write_forecasts(&mut buf, &window_entries(w), m.task.quantiles())?;
        atomic_write(&dir.join(fold_file(w.fold)), &buf)?;
        for (i, item) in w.forecasts.item_ids().iter().enumerate() {
            if let Some(t) = w.targets.get(i) {
                for (h, y) in t.iter().enumerate() {
                    targets.push(vec![
                        item.clone(),
                        w.fold.to_string(),
                        (h + 1).to_string(),
                        y.to_string(),
                    ]);
                }
            }
            scales.push(vec![item.clone(), w.fold.to_string(), w.scales[i].to_string()]);
        }
    }
    atomic_write(
        &dir.join("targets.csv"),
        &table(TARGETS_SCHEMA, &["item_id", "fold", "h", "value"], targets)?,
    )?;
    atomic_write(
        &dir.join("scales.csv"),
        &table(SCALES_SCHEMA, &["item_id", "fold", "scale"], scales)?,
    )?;
    atomic_write(
        &dir.join("fit_times.csv"),
        &table(
            FIT_TIMES_SCHEMA,
            &["model", "fold", "seconds"],
            store
                .fit_times
                .iter()
                .map(|t| vec![t.model.clone(), t.fold.to_string(), t.seconds.to_string()]),
        )?,
    )?;
    atomic_write(
        &dir.join("skipped.csv"),
        &table(
            SKIPPED_SCHEMA,
            &["fold", "item_id"],
            store.skipped.iter().map(|(f, i)| vec![f.to_string(), i.clone()]),
        )?,
    )
}

fn read_window(
    dir: &Path,
    fold: FoldId,
    meta: &OofMeta,
    targets: &BTreeMap<(FoldId, String), Vec<f64>>,
    scales: &BTreeMap<(FoldId, String), f64>,
) -> Result<WindowRecord> {
    let task = &meta.task;
    let entries = read_forecasts(
        &read_text(&dir.join(fold_file(fold)))?,
        task.horizon(),
        task.quantiles(),
    )?;
    let mut per_model: Vec<Vec<_>> = vec![Vec::new(); meta.model_ids.len()];
    for e in entries {
        if e.fold != fold {
            bail!("{} holds a record of fold {}", fold_file(fold), e.fold);
        }
        let m = meta
            .model_ids
            .iter()
            .position(|id| *id == e.model)
            .ok_or_else(|| anyhow!("unknown model `{}` in {}", e.model, fold_file(fold)))?;
        per_model[m].push(e.forecast);
    }
    let forecasts = ModelForecastSet::new(meta.model_ids.clone(), per_model)?;
    let items = forecasts.item_ids().to_vec();
    let t: Vec<Vec<f64>> = items
        .iter()
        .filter_map(|i| targets.get(&(fold, i.clone())).cloned())
        .collect();
    if !t.is_empty() && t.len() != items.len() {
        bail!("fold {fold}: targets cover {} of {} items", t.len(), items.len());
    }
    let s = items
        .iter()
        .map(|i| {
            scales
                .get(&(fold, i.clone()))
                .copied()
                .ok_or_else(|| anyhow!("fold {fold}: no scale for `{i}`"))
        })
        .collect::<Result<_>>()?;
    Ok(WindowRecord {
        fold,
        forecasts,
        targets: t,
        scales: s,
    })
}

/// Loads a store written by [`write_store`], with its dataset name.
pub fn read_store(layout: &StoreLayout) -> Result<(OofStore, String)> {
    let dir = layout.oof();
    let meta_rows = kv_rows(&read_text(&dir.join("meta.csv"))?, OOF_META_SCHEMA)?;
    let task = ForecastTask::new(
        kv_get(&meta_rows, "horizon")?.parse()?,
        split_floats(kv_get(&meta_rows, "quantiles")?)?,
        kv_get(&meta_rows, "metric")?.parse()?,
    )?;
    let meta = OofMeta {
        folds: kv_get(&meta_rows, "folds")?.parse()?,
        task,
        model_ids: kv_all(&meta_rows, "model").into_iter().map(String::from).collect(),
        seasonality: kv_get(&meta_rows, "seasonality")?.parse()?,
        min_train: kv_get(&meta_rows, "min_train")?.parse()?,
        seed: kv_get(&meta_rows, "seed")?.parse()?,
    };
    let items = read_table(
        &read_text(&dir.join("items.csv"))?,
        ITEMS_SCHEMA,
        &["item_id", "length"],
    )?
    .iter()
    .map(|r| Ok((field(r, 0, "item_id")?, field(r, 1, "length")?)))
    .collect::<Result<_>>()?;

    let mut targets: BTreeMap<(FoldId, String), Vec<f64>> = BTreeMap::new();
    for r in read_table(
        &read_text(&dir.join("targets.csv"))?,
        TARGETS_SCHEMA,
        &["item_id", "fold", "h", "value"],
    )? {
        let key = (field(&r, 1, "fold")?, field(&r, 0, "item_id")?);
        let h: usize = field(&r, 2, "h")?;
        let v = targets.entry(key).or_default();
        if h != v.len() + 1 {
            bail!(
                "targets.csv: steps out of order at line {}",
                r.position().map_or(0, |p| p.line() + 1)
            );
        }
        v.push(field(&r, 3, "value")?);
    }
    let mut scales = BTreeMap::new();
    for r in read_table(
        &read_text(&dir.join("scales.csv"))?,
        SCALES_SCHEMA,
        &["item_id", "fold", "scale"],
    )? {
        scales.insert(
            (field(&r, 1, "fold")?, field(&r, 0, "item_id")?),
            field(&r, 2, "scale")?,
        );
    }
    let windows = (1..=meta.folds)
        .map(|k| read_window(&dir, FoldId::Window(k), &meta, &targets, &scales))
        .collect::<Result<_>>()?;
    let test = if dir.join(fold_file(FoldId::Test)).exists() {
        Some(read_window(&dir, FoldId::Test, &meta, &targets, &scales)?)
    } else {
        None
    };
    let fit_times = read_table(
        &read_text(&dir.join("fit_times.csv"))?,
        FIT_TIMES_SCHEMA,
        &["model", "fold", "seconds"],
    )?
    .iter()
    .map(|r| {
        Ok(FitTime {
            model: field(r, 0, "model")?,
            fold: field(r, 1, "fold")?,
            seconds: field(r, 2, "seconds")?,
        })
    })
    .collect::<Result<_>>()?;
    let skipped = read_table(
        &read_text(&dir.join("skipped.csv"))?,
        SKIPPED_SCHEMA,
        &["fold", "item_id"],
    )?
    .iter()
    .map(|r| Ok((field(r, 0, "fold")?, field(r, 1, "item_id")?)))
    .collect::<Result<_>>()?;
    let dataset = kv_get(&meta_rows, "dataset")?.to_string();
    Ok((
        OofStore {
            meta,
            items,
            windows,
            test,
            fit_times,
            skipped,
        },
        dataset,
    ))
}

// Fitted combiners.

/// File-name form of a method name.
pub fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    s.trim_end_matches('_').to_string()
}

pub fn stacker_bytes(s: &TrainedStacker) -> Result<Vec<u8>> {
    let mut rows: Vec<Vec<String>> = vec![
        vec!["spec".into(), s.spec.to_string()],
        vec!["horizon".into(), s.horizon.to_string()],
        vec!["n_quantiles".into(), s.n_quantiles.to_string()],
        vec!["train_loss".into(), s.train_loss.to_string()],
        vec!["fit_seconds".into(), s.fit_seconds.to_string()],
        vec!["degenerate".into(), s.degenerate.to_string()],
    ];
    rows.extend(s.model_ids.iter().map(|m| vec!["model".to_string(), m.clone()]));
    match &s.payload {
        Payload::None => rows.push(vec!["payload".into(), "none".into()]),
        Payload::Choice(k) => {
            rows.push(vec!["payload".into(), "choice".into()]);
            rows.push(vec!["choice".into(), k.to_string()]);
        }
        Payload::Weights(w) => {
            rows.push(vec!["payload".into(), "weights".into()]);
            rows.push(vec!["tying".into(), w.tying.to_string()]);
            let dims = [w.n_items, w.n_steps, w.n_quantiles, w.n_input_quantiles, w.n_models];
            rows.push(vec!["dims".into(), dims.map(|d| d.to_string()).join(" ")]);
            rows.extend(w.items.iter().map(|i| vec!["item".to_string(), i.clone()]));
            rows.push(vec!["values".into(), join_floats(&w.values)]);
        }
        Payload::Tabular(t) => {
            rows.push(vec!["payload".into(), "tabular".into()]);
            let n = &t.net;
            let dims = [n.n_inputs, n.hidden, n.n_outputs];
            rows.push(vec!["dims".into(), dims.map(|d| d.to_string()).join(" ")]);
            rows.push(vec!["skip".into(), n.skip.to_string()]);
            rows.push(vec!["scaled".into(), t.scaled.to_string()]);
            rows.push(vec!["params".into(), join_floats(&n.params)]);
        }
    }
    table(STACKER_SCHEMA, &["key", "value"], rows)
}

fn dims(rows: &[(String, String)], n: usize) -> Result<Vec<usize>> {
    let d: Vec<usize> = kv_get(rows, "dims")?
        .split_whitespace()
        .map(|v| v.parse().map_err(|_| anyhow!("invalid dimension `{v}`")))
        .collect::<Result<_>>()?;
    if d.len() != n {
        bail!("expected {n} dimensions, found {}", d.len());
    }
    Ok(d)
}

pub fn parse_stacker(text: &str) -> Result<TrainedStacker> {
    let rows = kv_rows(text, STACKER_SCHEMA)?;
    let payload = match kv_get(&rows, "payload")? {
        "none" => Payload::None,
        "choice" => Payload::Choice(kv_get(&rows, "choice")?.parse()?),
        "weights" => {
            let d = dims(&rows, 5)?;
            let values = split_floats(kv_get(&rows, "values")?)?;
            if values.len() != d.iter().product::<usize>() {
                bail!("weight tensor has {} values for dimensions {d:?}", values.len());
            }
            Payload::Weights(WeightTensor {
                tying: kv_get(&rows, "tying")?.parse()?,
                n_items: d[0],
                n_steps: d[1],
                n_quantiles: d[2],
                n_input_quantiles: d[3],
                n_models: d[4],
                items: kv_all(&rows, "item").into_iter().map(String::from).collect(),
                values,
            })
        }
        "tabular" => {
            let d = dims(&rows, 3)?;
            let net = Mlp {
                n_inputs: d[0],
                hidden: d[1],
                n_outputs: d[2],
                skip: kv_get(&rows, "skip")?.parse()?,
                params: split_floats(kv_get(&rows, "params")?)?,
            };
            let expected = Mlp::n_params(net.n_inputs, net.hidden, net.n_outputs, net.skip);
            if net.params.len() != expected {
                bail!("network has {} parameters, expected {expected}", net.params.len());
            }
            Payload::Tabular(TabularModel {
                net,
                scaled: kv_get(&rows, "scaled")?.parse()?,
            })
        }
        other => bail!("unknown payload `{other}`"),
    };
    Ok(TrainedStacker {
        spec: kv_get(&rows, "spec")?.parse()?,
        model_ids: kv_all(&rows, "model").into_iter().map(String::from).collect(),
        horizon: kv_get(&rows, "horizon")?.parse()?,
        n_quantiles: kv_get(&rows, "n_quantiles")?.parse()?,
        payload,
        train_loss: kv_get(&rows, "train_loss")?.parse()?,
        fit_seconds: kv_get(&rows, "fit_seconds")?.parse()?,
        degenerate: kv_get(&rows, "degenerate")?.parse()?,
    })
}

pub fn write_stacker(layout: &StoreLayout, file_stem: &str, s: &TrainedStacker) -> Result<()> {
    atomic_write(&layout.stackers().join(format!("{file_stem}.csv")), &stacker_bytes(s)?)
}

// Multi-layer tables.

pub fn l3_weights_bytes(ensembles: &[(String, &StackLayers)]) -> Result<Vec<u8>> {
    let names = ensembles
        .first()
        .map(|e| e.1.provenance.l2_names.clone())
        .unwrap_or_default();
    let mut header = vec!["method"];
    header.extend(names.iter().map(String::as_str));
    let rows = ensembles.iter().map(|(name, layers)| {
        let mut row = vec![name.clone()];
        row.extend(layers.provenance.l3_weights.iter().map(f64::to_string));
        row
    });
    table(L3_WEIGHTS_SCHEMA, &header, rows.collect::<Vec<_>>())
}

pub const PROVENANCE_HEADER: [&str; 10] = [
    "method",
    "l2",
    "substitute_for",
    "interim_folds",
    "final_folds",
    "window_k_loss",
    "l3_weight",
    "interim_seconds",
    "final_seconds",
    "l3_seconds",
];

pub fn provenance_bytes(ensembles: &[(String, &StackLayers)]) -> Result<Vec<u8>> {
    let folds = |f: &[usize]| f.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut rows = Vec::new();
    for (name, layers) in ensembles {
        let p = &layers.provenance;
        for (k, l2) in p.l2_names.iter().enumerate() {
            rows.push(vec![
                name.clone(),
                l2.clone(),
                p.l2_substitutes[k].clone().unwrap_or_default(),
                folds(&p.interim_folds),
                folds(&p.final_folds),
                p.window_k_losses[k].to_string(),
                p.l3_weights[k].to_string(),
                p.interim_seconds[k].to_string(),
                p.final_seconds[k].to_string(),
                p.l3_seconds.to_string(),
            ]);
        }
    }
    table(PROVENANCE_SCHEMA, &PROVENANCE_HEADER, rows)
}

pub fn l3_rows_bytes(layers: &StackLayers) -> Result<Vec<u8>> {
    table(
        L3_ROWS_SCHEMA,
        &["item_id", "fold", "origin_t"],
        layers
            .provenance
            .l3_rows
            .iter()
            .map(|r| vec![r.item.clone(), r.fold.to_string(), r.origin_t.to_string()]),
    )
}

/// A markdown document behind an HTML comment carrying the schema.
pub fn report_bytes(markdown: &str) -> Vec<u8> {
    format!("<!-- schema={REPORT_SCHEMA} -->\n{markdown}").into_bytes()
}
