//! Human-readable rendering of evaluation outputs, plus the parse-test
//! corpus debugging aid.

use std::path::Path;

use super::config::RunConfig;
use super::HarnessError;
use crate::parsing::{parse_output, ParseStrategy};

/// A parsed row of `aggregate.csv` (the flat table round-trips).
#[derive(Debug, Clone)]
struct FlatRow {
    model: String,
    strategy: String,
    dataset: String,
    metric: String,
    value: Option<f64>,
    relative_change: Option<f64>,
}

/// A parsed row of `per_bin.csv`.
#[derive(Debug, Clone)]
struct BinRow {
    model: String,
    strategy: String,
    dataset: String,
    bin: usize,
    metric: String,
    median: Option<f64>,
}

fn csv_records(path: &Path) -> Result<Vec<csv::StringRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    let mut records = Vec::new();
    for record in reader.records() {
        records.push(record?);
    }
    Ok(records)
}

fn read_flat_csv(path: &Path) -> Result<Vec<FlatRow>, HarnessError> {
    Ok(csv_records(path)?
        .into_iter()
        .map(|record| {
            let cell = |i: usize| record.get(i).unwrap_or("").to_string();
            let num = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok());
            FlatRow {
                model: cell(0),
                strategy: cell(1),
                dataset: cell(2),
                metric: cell(3),
                value: num(4),
                relative_change: num(5),
            }
        })
        .collect())
}

fn read_per_bin_csv(path: &Path) -> Result<Vec<BinRow>, HarnessError> {
    Ok(csv_records(path)?
        .into_iter()
        .map(|record| {
            let cell = |i: usize| record.get(i).unwrap_or("").to_string();
            BinRow {
                model: cell(0),
                strategy: cell(1),
                dataset: cell(2),
                bin: record.get(3).and_then(|s| s.parse().ok()).unwrap_or(0),
                metric: cell(4),
                median: record.get(5).and_then(|s| s.parse::<f64>().ok()),
            }
        })
        .collect())
}

const METRIC_ORDER: [&str; 6] = [
    "mean_js",
    "mean_bc",
    "r2",
    "accuracy",
    "macro_f1",
    "valid_rate",
];

fn cell_text(value: Option<f64>, relative_change: Option<f64>) -> String {
    let base = match value {
        Some(v) => format!("{v:.4}"),
        None => "-".to_string(),
    };
    match relative_change {
        Some(rel) => format!("{base} ({:+.1}%)", rel * 100.0),
        None => base,
    }
}

fn render_table(title: &str, headers: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{c:<width$}", width = widths[i]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(headers));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Pivot the flat tables into readable text: one block per model × dataset
/// with strategies as rows and metrics as columns (relative changes in
/// brackets), then per-metric bin tables.
fn render_report(aggregate: &[FlatRow], per_bin: &[BinRow]) -> String {
    let mut blocks = Vec::new();
    let mut seen = Vec::new();
    for row in aggregate {
        let key = (row.model.clone(), row.dataset.clone());
        if !seen.contains(&key) {
            seen.push(key);
        }
    }
    for (model, dataset) in &seen {
        let block_rows: Vec<&FlatRow> = aggregate
            .iter()
            .filter(|r| &r.model == model && &r.dataset == dataset)
            .collect();
        let mut strategies = Vec::new();
        for row in &block_rows {
            if !strategies.contains(&row.strategy) {
                strategies.push(row.strategy.clone());
            }
        }
        let mut headers = vec!["strategy".to_string()];
        headers.extend(METRIC_ORDER.iter().map(|m| m.to_string()));
        let rows: Vec<Vec<String>> = strategies
            .iter()
            .map(|strategy| {
                let mut cells = vec![strategy.clone()];
                for metric in METRIC_ORDER {
                    let cell = block_rows
                        .iter()
                        .find(|r| &r.strategy == strategy && r.metric == metric)
                        .map(|r| cell_text(r.value, r.relative_change))
                        .unwrap_or_else(|| "-".to_string());
                    cells.push(cell);
                }
                cells
            })
            .collect();
        blocks.push(render_table(
            &format!("== {model} on {dataset} =="),
            &headers,
            &rows,
        ));

        for metric in ["js", "bc", "r2"] {
            let metric_rows: Vec<&BinRow> = per_bin
                .iter()
                .filter(|r| &r.model == model && &r.dataset == dataset && r.metric == metric)
                .collect();
            if metric_rows.is_empty() {
                continue;
            }
            let headers: Vec<String> = std::iter::once("strategy".to_string())
                .chain((0..5).map(|b| format!("bin {b}")))
                .collect();
            let rows: Vec<Vec<String>> = strategies
                .iter()
                .map(|strategy| {
                    let mut cells = vec![strategy.clone()];
                    for bin in 0..5 {
                        let cell = metric_rows
                            .iter()
                            .find(|r| &r.strategy == strategy && r.bin == bin)
                            .map(|r| cell_text(r.median, None))
                            .unwrap_or_else(|| "-".to_string());
                        cells.push(cell);
                    }
                    cells
                })
                .collect();
            blocks.push(render_table(
                &format!("-- median {metric} by ambiguity bin --"),
                &headers,
                &rows,
            ));
        }
    }
    blocks.join("\n")
}

/// Render the last evaluation's tables from the output directory.
pub fn cmd_report(config: &RunConfig) -> Result<String, HarnessError> {
    let aggregate_path = config.output_dir.join("aggregate.csv");
    if !aggregate_path.exists() {
        return Err(HarnessError::Usage(format!(
            "{} not found; run evaluate first",
            aggregate_path.display()
        )));
    }
    let aggregate = read_flat_csv(&aggregate_path)?;
    let per_bin = read_per_bin_csv(&config.output_dir.join("per_bin.csv"))?;
    Ok(render_report(&aggregate, &per_bin))
}

#[derive(Debug, Clone)]
pub struct ParseTestRow {
    pub line: usize,
    pub strategy: ParseStrategy,
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug)]
pub struct ParseTestOutcome {
    pub rows: Vec<ParseTestRow>,
    pub valid: usize,
}

impl ParseTestOutcome {
    pub fn total(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut out = String::from("line  strategy       distribution\n");
        for row in &self.rows {
            let dist = match &row.probs {
                Some(p) => format!(
                    "[{}]",
                    p.iter()
                        .map(|v| format!("{v:.6}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                None => "-".to_string(),
            };
            out.push_str(&format!("{:>4}  {:<13}  {dist}\n", row.line, row.strategy.to_string()));
        }
        if self.rows.is_empty() {
            out.push_str("valid rate: n/a (empty input)\n");
        } else {
            out.push_str(&format!(
                "valid rate: {}/{} ({:.3})\n",
                self.valid,
                self.total(),
                self.valid as f64 / self.total() as f64
            ));
        }
        out
    }
}

/// Feed a file of raw model outputs (one per line) through the parsing
/// cascade against the first configured dataset's categories.
pub fn cmd_parse_test(config: &RunConfig, input: &Path) -> Result<ParseTestOutcome, HarnessError> {
    let dataset = config
        .datasets
        .first()
        .ok_or_else(|| HarnessError::Usage("no datasets configured".to_string()))?;
    let categories = dataset.category_set()?;
    let text = std::fs::read_to_string(input).map_err(|source| HarnessError::Io {
        path: input.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut valid = 0;
    for (idx, line) in text.lines().enumerate() {
        let outcome = parse_output(line, &categories);
        if outcome.is_valid() {
            valid += 1;
        }
        rows.push(ParseTestRow {
            line: idx + 1,
            strategy: outcome.strategy_used,
            probs: outcome.distribution.map(|d| d.probs().to_vec()),
        });
    }
    Ok(ParseTestOutcome { rows, valid })
}
