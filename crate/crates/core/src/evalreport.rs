//! Cross-dataset aggregation of method scores: Elo, average rank, champion
//! counts, relative error and training time.
//!
//! A "task" below is one `(dataset, metric)` pair; every method must be
//! scored on every task before anything is aggregated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::io::{check_header, csv_reader, parse_field, split_schema, write_schema};
use crate::series::EvalLoss;

pub const RECORDS_SCHEMA: &str = "stackcast.records/1";
pub const RECORDS_HEADER: [&str; 5] = ["method", "dataset", "metric", "value", "fit_time_s"];

/// Rating the baseline method is anchored to.
pub const BASELINE_ELO: f64 = 1000.0;
/// Bounds applied to per-dataset relative errors.
pub const REL_ERROR_CLIP: (f64, f64) = (1e-3, 5.0);

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub dataset: String,
    pub metric: EvalLoss,
    pub value: f64,
    /// Fit time of the combiner, excluding base models.
    pub fit_time_s: f64,
}

impl EvalRecord {
    pub fn new(
        method: impl Into<String>,
        dataset: impl Into<String>,
        metric: EvalLoss,
        value: f64,
        fit_time_s: f64,
    ) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            metric,
            value,
            fit_time_s,
        }
    }
}

pub fn write_records<W: Write>(out: &mut W, records: &[EvalRecord]) -> Result<()> {
    write_schema(out, RECORDS_SCHEMA)?;
    writeln!(out, "{}", RECORDS_HEADER.join(","))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in records {
        w.write_record([
            r.method.clone(),
            r.dataset.clone(),
            r.metric.to_string(),
            r.value.to_string(),
            r.fit_time_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a records file, rejecting duplicated `(method, dataset, metric)`
/// keys and negative or non-finite numbers.
pub fn read_records(text: &str) -> Result<Vec<EvalRecord>> {
    let body = split_schema(text, RECORDS_SCHEMA)?;
    let mut reader = csv_reader(body);
    check_header(reader.headers()?, &RECORDS_HEADER)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize + 1).unwrap_or_default();
        let record = EvalRecord {
            method: parse_field(&row, 0, "method")?,
            dataset: parse_field(&row, 1, "dataset")?,
            metric: parse_field(&row, 2, "metric")?,
            value: parse_field(&row, 3, "value")?,
            fit_time_s: parse_field(&row, 4, "fit_time_s")?,
        };
        if !(record.value.is_finite()
            && record.value >= 0.0
            && record.fit_time_s.is_finite()
            && record.fit_time_s >= 0.0)
        {
            return Err(Error::Parse {
                line,
                message: "values and fit times must be finite and non-negative".into(),
            });
        }
        records.push(record);
    }
    check_unique(&records)?;
    Ok(records)
}

fn check_unique(records: &[EvalRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.method.as_str(), r.dataset.as_str(), r.metric.to_string())) {
            return Err(Error::DuplicateRecord {
                method: r.method.clone(),
                dataset: r.dataset.clone(),
                metric: r.metric.to_string(),
            });
        }
    }
    Ok(())
}

/// Complete method-by-task score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    /// Sorted method names.
    pub methods: Vec<String>,
    /// Sorted task labels, `dataset` or `dataset/metric` when a dataset is
    /// scored under several metrics.
    pub tasks: Vec<String>,
    /// `values[t][m]`.
    pub values: Vec<Vec<f64>>,
    pub fit_times: Vec<Vec<f64>>,
}

impl ScoreGrid {
    pub fn new(records: &[EvalRecord]) -> Result<Self> {
        check_unique(records)?;
        let methods: Vec<String> = records
            .iter()
            .map(|r| r.method.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let keys: BTreeSet<(String, String)> = records
            .iter()
            .map(|r| (r.dataset.clone(), r.metric.to_string()))
            .collect();
        let mut per_dataset: BTreeMap<&str, usize> = BTreeMap::new();
        for (d, _) in &keys {
            *per_dataset.entry(d).or_default() += 1;
        }
        let label = |d: &str, metric: &str| {
            if per_dataset[d] > 1 {
                format!("{d}/{metric}")
            } else {
                d.to_string()
            }
        };
        let cells: BTreeMap<(&str, &str, String), &EvalRecord> = records
            .iter()
            .map(|r| ((r.method.as_str(), r.dataset.as_str(), r.metric.to_string()), r))
            .collect();
        let mut values = Vec::new();
        let mut fit_times = Vec::new();
        let mut tasks = Vec::new();
        for (d, metric) in &keys {
            let mut row = Vec::new();
            let mut times = Vec::new();
            for m in &methods {
                let r = cells
                    .get(&(m.as_str(), d.as_str(), metric.clone()))
                    .ok_or_else(|| Error::MissingCell {
                        method: m.clone(),
                        dataset: label(d, metric),
                    })?;
                row.push(r.value);
                times.push(r.fit_time_s);
            }
            tasks.push(label(d, metric));
            values.push(row);
            fit_times.push(times);
        }
        Ok(Self {
            methods,
            tasks,
            values,
            fit_times,
        })
    }

    fn method_index(&self, name: &str) -> Result<usize> {
        self.methods
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::InvalidConfig(format!("baseline `{name}` has no records")))
    }
}

/// Ascending ranks, tied values sharing the average of their positions.
pub fn rank_with_ties(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Mean rank of each method over tasks.
pub fn avg_rank(grid: &ScoreGrid) -> Vec<f64> {
    let n = grid.tasks.len() as f64;
    let mut sums = vec![0.0; grid.methods.len()];
    for row in &grid.values {
        for (s, r) in sums.iter_mut().zip(rank_with_ties(row)) {
            *s += r;
        }
    }
    sums.iter().map(|s| s / n).collect()
}

/// Number of tasks on which each method attains the lowest error; every
/// tied winner is credited.
pub fn champion_counts(grid: &ScoreGrid) -> Vec<usize> {
    let mut counts = vec![0; grid.methods.len()];
    for row in &grid.values {
        let best = row.iter().copied().fold(f64::INFINITY, f64::min);
        for (c, &v) in counts.iter_mut().zip(row) {
            if v == best {
                *c += 1;
            }
        }
    }
    counts
}

/// Geometric mean over tasks of the error relative to `baseline`, each
/// ratio clipped to [`REL_ERROR_CLIP`].
pub fn gmean_relative_error(grid: &ScoreGrid, baseline: &str) -> Result<Vec<f64>> {
    let b = grid.method_index(baseline)?;
    let mut logs = vec![0.0; grid.methods.len()];
    for (row, task) in grid.values.iter().zip(&grid.tasks) {
        if row[b] <= 0.0 {
            return Err(Error::ZeroBaseline {
                baseline: baseline.to_string(),
                dataset: task.clone(),
            });
        }
        for (l, &v) in logs.iter_mut().zip(row) {
            *l += (v / row[b]).clamp(REL_ERROR_CLIP.0, REL_ERROR_CLIP.1).ln();
        }
    }
    let n = grid.tasks.len() as f64;
    Ok(logs.iter().map(|l| (l / n).exp()).collect())
}

/// Pairwise win counts `w[a][b]`: one per task `a` beats `b`, a half for a
/// tie, plus one pseudo-tie per pair.
pub fn pairwise_wins(grid: &ScoreGrid) -> Vec<Vec<f64>> {
    let n = grid.methods.len();
    let mut w = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            w[a][b] = 0.5;
            for row in &grid.values {
                if row[a] < row[b] {
                    w[a][b] += 1.0;
                } else if row[a] == row[b] {
                    w[a][b] += 0.5;
                }
            }
        }
    }
    w
}

const ELO_MAX_ITER: usize = 100_000;
const ELO_TOL: f64 = 1e-13;

/// Bradley-Terry maximum-likelihood strengths from a win matrix, solved by
/// the minorize-maximize iteration with log-strengths centred at zero.
pub fn bradley_terry(wins: &[Vec<f64>]) -> Vec<f64> {
    let n = wins.len();
    let total: Vec<f64> = wins.iter().map(|r| r.iter().sum()).collect();
    let mut p = vec![1.0; n];
    for _ in 0..ELO_MAX_ITER {
        let mut next: Vec<f64> = (0..n)
            .map(|a| {
                let denom: f64 = (0..n)
                    .filter(|&b| b != a)
                    .map(|b| (wins[a][b] + wins[b][a]) / (p[a] + p[b]))
                    .sum();
                if denom > 0.0 {
                    total[a] / denom
                } else {
                    p[a]
                }
            })
            .collect();
        let centre = next.iter().map(|x| x.ln()).sum::<f64>() / n as f64;
        for x in &mut next {
            *x /= centre.exp();
        }
        let change = next
            .iter()
            .zip(&p)
            .map(|(a, b)| (a.ln() - b.ln()).abs())
            .fold(0.0, f64::max);
        p = next;
        if change < ELO_TOL {
            break;
        }
    }
    p
}

/// Elo ratings: Bradley-Terry strengths on the `400 log10` scale, shifted so
/// the baseline rates exactly [`BASELINE_ELO`].
pub fn elo(grid: &ScoreGrid, baseline: &str) -> Result<Vec<f64>> {
    let b = grid.method_index(baseline)?;
    if grid.methods.len() < 2 {
        return Err(Error::InvalidConfig("Elo needs at least two methods".into()));
    }
    let p = bradley_terry(&pairwise_wins(grid));
    let anchor = 400.0 * p[b].log10();
    Ok(p.iter()
        .enumerate()
        .map(|(k, x)| {
            if k == b {
                BASELINE_ELO
            } else {
                BASELINE_ELO + 400.0 * x.log10() - anchor
            }
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardRow {
    pub method: String,
    pub elo: f64,
    pub champion: usize,
    pub avg_rank: f64,
    pub rel_error: f64,
    pub median_fit_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Leaderboard {
    pub baseline: String,
    pub n_tasks: usize,
    /// Sorted by Elo, best first; ties by name.
    pub rows: Vec<LeaderboardRow>,
}

pub fn leaderboard(records: &[EvalRecord], baseline: &str) -> Result<Leaderboard> {
    let grid = ScoreGrid::new(records)?;
    let elo = elo(&grid, baseline)?;
    let champion = champion_counts(&grid);
    let ranks = avg_rank(&grid);
    let rel = gmean_relative_error(&grid, baseline)?;
    let mut rows: Vec<LeaderboardRow> = grid
        .methods
        .iter()
        .enumerate()
        .map(|(m, name)| LeaderboardRow {
            method: name.clone(),
            elo: elo[m],
            champion: champion[m],
            avg_rank: ranks[m],
            rel_error: rel[m],
            median_fit_time: median(&mut grid.fit_times.iter().map(|t| t[m]).collect::<Vec<_>>()),
        })
        .collect();
    rows.sort_by(|a, b| b.elo.total_cmp(&a.elo).then_with(|| a.method.cmp(&b.method)));
    Ok(Leaderboard {
        baseline: baseline.to_string(),
        n_tasks: grid.tasks.len(),
        rows,
    })
}

pub const LEADERBOARD_SCHEMA: &str = "stackcast.leaderboard/1";
pub const LEADERBOARD_HEADER: [&str; 6] = [
    "method",
    "elo",
    "champion",
    "avg_rank",
    "avg_relative_error",
    "median_fit_time_s",
];

impl Leaderboard {
    pub fn row(&self, method: &str) -> Option<&LeaderboardRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("#schema={LEADERBOARD_SCHEMA}\n{}\n", LEADERBOARD_HEADER.join(","));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.3},{},{:.4},{:.6},{:.6}",
                csv_field(&r.method),
                r.elo,
                r.champion,
                r.avg_rank,
                r.rel_error,
                r.median_fit_time
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!(
            "Baseline: {} ({} dataset{})\n\n",
            self.baseline,
            self.n_tasks,
            if self.n_tasks == 1 { "" } else { "s" }
        );
        out.push_str(
            "| Method | Elo↑ | Champion↑ | Average rank↓ | Average relative error↓ | Median marginal training time↓ |\n",
        );
        out.push_str("|---|---:|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.0} | {} | {:.2} | {:.3} | {} |",
                r.method.replace('|', "\\|"),
                r.elo,
                r.champion,
                r.avg_rank,
                r.rel_error,
                format_seconds(r.median_fit_time)
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn format_seconds(s: f64) -> String {
    if s < 1.0 {
        format!("{s:.3}s")
    } else {
        format!("{s:.1}s")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(rows: &[&[f64]]) -> ScoreGrid {
        let records: Vec<EvalRecord> = rows
            .iter()
            .enumerate()
            .flat_map(|(d, row)| {
                row.iter().enumerate().map(move |(m, &v)| {
                    EvalRecord::new(format!("m{m}"), format!("d{d:02}"), EvalLoss::Sql, v, m as f64)
                })
            })
            .collect();
        ScoreGrid::new(&records).unwrap()
    }

    #[test]
    fn tie_ranks_are_averaged() {
        assert_eq!(rank_with_ties(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(avg_rank(&grid(&[&[1.0, 2.0], &[2.0, 1.0]])), vec![1.5, 1.5]);
        assert_eq!(avg_rank(&grid(&[&[3.0; 4], &[3.0; 4]])), vec![2.5; 4]);
    }

    #[test]
    fn champions_credit_every_tied_winner() {
        let g = grid(&[&[1.0, 1.0, 2.0], &[3.0, 2.0, 1.0], &[0.5, 0.7, 0.9]]);
        assert_eq!(champion_counts(&g), vec![2, 1, 1]);
    }

    #[test]
    fn relative_error_is_clipped() {
        let g = grid(&[&[1.0, 0.5, 10.0, 1e-6], &[1.0, 2.0, 10.0, 1e-6]]);
        let rel = gmean_relative_error(&g, "m0").unwrap();
        assert_eq!(rel[0], 1.0);
        assert!((rel[1] - 1.0).abs() < 1e-15);
        assert!((rel[2] - 5.0).abs() < 1e-12);
        assert!((rel[3] - 1e-3).abs() < 1e-15);
        let zero = grid(&[&[0.0, 1.0]]);
        assert!(matches!(
            gmean_relative_error(&zero, "m0"),
            Err(Error::ZeroBaseline { .. })
        ));
    }

    #[test]
    fn elo_symmetric_cases_are_anchored() {
        let ties = grid(&[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]]);
        assert!(elo(&ties, "m1").unwrap().iter().all(|&e| (e - 1000.0).abs() < 1e-9));
        let split = grid(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(elo(&split, "m0").unwrap().iter().all(|&e| e == 1000.0));
    }

    #[test]
    fn elo_two_players_closed_form() {
        // With a pseudo-tie, 7 wins and 3 losses give wins 7.5 against 3.5.
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|d| if d < 7 { vec![2.0, 1.0] } else { vec![1.0, 2.0] })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let e = elo(&grid(&refs), "m0").unwrap();
        assert_eq!(e[0], 1000.0);
        assert!((e[1] - (1000.0 + 400.0 * (7.5f64 / 3.5).log10())).abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn missing_and_duplicate_cells_are_rejected() {
        let mut records = vec![
            EvalRecord::new("a", "d1", EvalLoss::Sql, 1.0, 0.0),
            EvalRecord::new("b", "d1", EvalLoss::Sql, 1.0, 0.0),
            EvalRecord::new("a", "d2", EvalLoss::Sql, 1.0, 0.0),
        ];
        assert_eq!(
            ScoreGrid::new(&records),
            Err(Error::MissingCell {
                method: "b".into(),
                dataset: "d2".into()
            })
        );
        records.push(records[0].clone());
        assert!(matches!(ScoreGrid::new(&records), Err(Error::DuplicateRecord { .. })));
    }

    #[test]
    fn records_round_trip() {
        let records = vec![
            EvalRecord::new("Linear(mq,softmax)", "d1", EvalLoss::Sql, 0.1 + 0.2, 1e-9),
            EvalRecord::new("Median", "d1", EvalLoss::Mase, 3.0, 0.0),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("#schema=stackcast.records/1\nmethod,dataset,metric,value,fit_time_s\n"));
        assert_eq!(read_records(&text).unwrap(), records);
        assert!(matches!(
            read_records("#schema=stackcast.records/9\n"),
            Err(Error::SchemaVersion { .. })
        ));
    }

    #[test]
    fn leaderboard_renders_deterministically() {
        let records = vec![
            EvalRecord::new("Median", "d1", EvalLoss::Sql, 1.0, 0.0),
            EvalRecord::new("Greedy(100)", "d1", EvalLoss::Sql, 0.8, 0.5),
            EvalRecord::new("Median", "d2", EvalLoss::Sql, 1.0, 0.0),
            EvalRecord::new("Greedy(100)", "d2", EvalLoss::Sql, 0.9, 1.5),
        ];
        let board = leaderboard(&records, "Median").unwrap();
        assert_eq!(board.rows.len(), 2);
        assert_eq!(board.row("Median").unwrap().elo, 1000.0);
        assert_eq!(board.rows[0].method, "Greedy(100)");
        assert_eq!(board.row("Greedy(100)").unwrap().median_fit_time, 1.0);
        let md = board.to_markdown();
        assert!(md.contains("| Median | 1000 | 0 | 2.00 | 1.000 | 0.000s |"), "{md}");
        assert_eq!(md, leaderboard(&records, "Median").unwrap().to_markdown());
        assert_eq!(board.to_csv().lines().count(), 4);
    }

    proptest! {
        #[test]
        fn order_preserving_transforms_keep_elo_and_ranks(
            rows in prop::collection::vec(prop::collection::vec(0.1f64..3.0, 3), 1..6)
        ) {
            let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
            let squared: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * v).collect()).collect();
            let sq_refs: Vec<&[f64]> = squared.iter().map(Vec::as_slice).collect();
            let (a, b) = (grid(&refs), grid(&sq_refs));
            let (ea, eb) = (elo(&a, "m0").unwrap(), elo(&b, "m0").unwrap());
            prop_assert_eq!(ea[0], 1000.0);
            for (x, y) in ea.iter().zip(&eb) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(avg_rank(&a), avg_rank(&b));
            prop_assert_eq!(gmean_relative_error(&a, "m0").unwrap()[0], 1.0);
        }
    }
}
