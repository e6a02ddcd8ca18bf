use std::fmt::Write as _;

use serde::Serialize;

use super::{mean, HarnessError, RunResult};
use crate::methods::MethodKind;

/// A run that either completed or failed; failures keep their place in
/// the table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunOutcome {
    Done(RunResult),
    Failed {
        dataset: String,
        method: MethodKind,
        seed: u64,
        fold: Option<usize>,
        error: String,
    },
}

impl RunOutcome {
    fn key(&self) -> (&str, MethodKind, u64) {
        match self {
            RunOutcome::Done(r) => (&r.dataset, r.method, r.seed),
            RunOutcome::Failed {
                dataset, method, seed, ..
            } => (dataset, *method, *seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!("unknown table format {other:?} (expected markdown or csv)")),
        }
    }
}

/// A cell: fold-mean accuracy, or `None` when any constituent failed or
/// is missing.
type Cell = Option<f64>;

/// Accuracy per dataset × method × seed, with per-method averages and a
/// grand-average row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkTable {
    pub datasets: Vec<String>,
    /// First-appearance order of the input.
    pub methods: Vec<MethodKind>,
    /// Ascending.
    pub seeds: Vec<u64>,
    /// `cells[dataset][method][seed]`
    pub cells: Vec<Vec<Vec<Cell>>>,
}

fn all_mean(cells: &[Cell]) -> Cell {
    let values: Option<Vec<f64>> = cells.iter().copied().collect();
    values.and_then(|v| mean(&v))
}

impl BenchmarkTable {
    pub fn from_results(results: &[RunOutcome]) -> Result<Self, HarnessError> {
        if results.is_empty() {
            return Err(HarnessError::EmptyResults);
        }
        let mut datasets: Vec<String> = Vec::new();
        let mut methods = Vec::new();
        let mut seeds = Vec::new();
        for r in results {
            let (d, m, s) = r.key();
            if !datasets.iter().any(|x| x == d) {
                datasets.push(d.to_string());
            }
            if !methods.contains(&m) {
                methods.push(m);
            }
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        seeds.sort_unstable();
        let cells = datasets
            .iter()
            .map(|d| {
                methods
                    .iter()
                    .map(|&m| {
                        seeds
                            .iter()
                            .map(|&s| {
                                let group: Vec<&RunOutcome> = results.iter().filter(|r| r.key() == (d.as_str(), m, s)).collect();
                                let accs: Option<Vec<f64>> = group
                                    .iter()
                                    .map(|r| match r {
                                        RunOutcome::Done(r) => Some(r.accuracy),
                                        RunOutcome::Failed { .. } => None,
                                    })
                                    .collect();
                                accs.and_then(|a| mean(&a))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            datasets,
            methods,
            seeds,
            cells,
        })
    }

    /// Mean over seeds of one dataset row.
    pub fn row_average(&self, dataset: usize, method: usize) -> Cell {
        all_mean(&self.cells[dataset][method])
    }

    /// Mean over datasets of one seed column.
    pub fn column_average(&self, method: usize, seed: usize) -> Cell {
        let col: Vec<Cell> = self.cells.iter().map(|row| row[method][seed]).collect();
        all_mean(&col)
    }

    /// Mean over datasets of the per-dataset averages.
    pub fn grand_average(&self, method: usize) -> Cell {
        let col: Vec<Cell> = (0..self.datasets.len()).map(|d| self.row_average(d, method)).collect();
        all_mean(&col)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["dataset".to_string()];
        for m in &self.methods {
            for s in &self.seeds {
                h.push(format!("{m} SEED-{s}"));
            }
            h.push(format!("{m} AVG"));
        }
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let fmt = |c: Cell| c.map_or_else(|| "FAIL".to_string(), |v| format!("{v:.4}"));
        let mut rows = Vec::new();
        for (d, name) in self.datasets.iter().enumerate() {
            let mut row = vec![name.clone()];
            for m in 0..self.methods.len() {
                row.extend(self.cells[d][m].iter().map(|&c| fmt(c)));
                row.push(fmt(self.row_average(d, m)));
            }
            rows.push(row);
        }
        let mut avg = vec!["AVERAGE".to_string()];
        for m in 0..self.methods.len() {
            avg.extend((0..self.seeds.len()).map(|s| fmt(self.column_average(m, s))));
            avg.push(fmt(self.grand_average(m)));
        }
        rows.push(avg);
        rows
    }

    pub fn render(&self, format: TableFormat) -> String {
        let header = self.header();
        let rows = self.rows();
        match format {
            TableFormat::Markdown => {
                let mut out = String::new();
                let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
                out.push_str(&line(&header));
                let rule: Vec<String> = header
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i == 0 { "---".to_string() } else { "---:".to_string() })
                    .collect();
                out.push_str(&line(&rule));
                for r in &rows {
                    let escaped: Vec<String> = r.iter().map(|c| c.replace('|', "\\|")).collect();
                    out.push_str(&line(&escaped));
                }
                out
            }
            TableFormat::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::CRLF)
                    .from_writer(Vec::new());
                w.write_record(&header).expect("in-memory write");
                for r in &rows {
                    w.write_record(r).expect("in-memory write");
                }
                String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
            }
        }
    }
}

pub fn emit_table(results: &[RunOutcome], format: TableFormat) -> Result<String, HarnessError> {
    Ok(BenchmarkTable::from_results(results)?.render(format))
}

/// Failure summary lines, one per failed run.
pub fn failure_lines(results: &[RunOutcome]) -> String {
    let mut out = String::new();
    for r in results {
        if let RunOutcome::Failed {
            dataset,
            method,
            seed,
            fold,
            error,
        } = r
        {
            let _ = write!(out, "{dataset} {method} seed {seed}");
            if let Some(f) = fold {
                let _ = write!(out, " fold {f}");
            }
            let _ = writeln!(out, ": {error}");
        }
    }
    out
}
