//! Aggregated results and their Markdown/CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::ModelKind;
use crate::fewshot::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub seeds: usize,
    pub kappa_mean: f64,
    pub kappa_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub item: String,
    pub shot: usize,
    /// `None` for zero-shot cells, which draw no samples.
    pub strategy: Option<StrategyKind>,
    pub model: ModelKind,
    pub stats: Option<CellStats>,
    pub error: Option<String>,
}

impl CellReport {
    pub fn failed(
        item: &str,
        shot: usize,
        strategy: Option<StrategyKind>,
        model: ModelKind,
        error: String,
    ) -> Self {
        CellReport {
            item: item.to_string(),
            shot,
            strategy,
            model,
            stats: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_digest: String,
    pub backend: Option<String>,
    pub seeds: Vec<u64>,
    /// Kept out of the rendered tables so reruns compare byte for byte.
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Item ids in configuration order.
    pub items: Vec<String>,
    pub cells: Vec<CellReport>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv line {line}: {message}")]
    Field { line: u64, message: String },
}

const CSV_HEADER: [&str; 10] = [
    "item",
    "shot",
    "strategy",
    "model",
    "seeds",
    "kappa_mean",
    "kappa_std",
    "f1_mean",
    "f1_std",
    "error",
];

fn strategy_label(strategy: Option<StrategyKind>) -> &'static str {
    strategy.map_or("-", StrategyKind::label)
}

fn parse_strategy(label: &str) -> Option<Option<StrategyKind>> {
    match label {
        "-" => Some(None),
        "random" => Some(Some(StrategyKind::Random)),
        "manual" => Some(Some(StrategyKind::ManualFile)),
        _ => None,
    }
}

/// Percent with one decimal; `-0.0` prints as `0.0`.
fn percent(value: f64) -> String {
    let rounded = (value * 1000.0).round() / 10.0;
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:.1}")
}

fn fixed6(value: f64) -> String {
    let s = format!("{value:.6}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

impl MetricReport {
    pub fn sort_cells(&mut self) {
        let items = &self.items;
        let position = |id: &str| items.iter().position(|i| i == id).unwrap_or(usize::MAX);
        self.cells.sort_by(|a, b| {
            (a.shot, a.strategy, a.model, position(&a.item))
                .cmp(&(b.shot, b.strategy, b.model, position(&b.item)))
        });
    }

    pub fn cell(
        &self,
        item: &str,
        shot: usize,
        strategy: Option<StrategyKind>,
        model: ModelKind,
    ) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.item == item && c.shot == shot && c.strategy == strategy && c.model == model)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.render_markdown(),
            ReportFormat::Csv => self.render_csv(),
        }
    }

    fn row_keys(&self) -> Vec<(usize, Option<StrategyKind>, ModelKind)> {
        let mut keys: Vec<_> = self.cells.iter().map(|c| (c.shot, c.strategy, c.model)).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    fn render_markdown(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.metadata.seeds.iter().map(u64::to_string).collect();
        writeln!(out, "Config digest: `{}`", self.metadata.config_digest).unwrap();
        if let Some(backend) = &self.metadata.backend {
            writeln!(out, "Backend: `{backend}`").unwrap();
        }
        writeln!(out, "Seeds: {}", seeds.join(", ")).unwrap();
        writeln!(out, "Values are mean±std over seeds, in percent.").unwrap();
        out.push('\n');

        out.push_str("| Shot | Sample | Model |");
        for item in &self.items {
            write!(out, " {item} Kappa | {item} F1 |").unwrap();
        }
        out.push('\n');
        out.push_str("|---|---|---|");
        for _ in &self.items {
            out.push_str("---|---|");
        }
        out.push('\n');
        for (shot, strategy, model) in self.row_keys() {
            write!(out, "| {shot} | {} | {model} |", strategy_label(strategy)).unwrap();
            for item in &self.items {
                match self.cell(item, shot, strategy, model) {
                    Some(CellReport { stats: Some(s), .. }) => write!(
                        out,
                        " {}±{} | {}±{} |",
                        percent(s.kappa_mean),
                        percent(s.kappa_std),
                        percent(s.f1_mean),
                        percent(s.f1_std)
                    )
                    .unwrap(),
                    Some(_) => out.push_str(" failed | failed |"),
                    None => out.push_str(" - | - |"),
                }
            }
            out.push('\n');
        }

        let failures: Vec<&CellReport> = self.failures().collect();
        if !failures.is_empty() {
            out.push_str("\nFailed cells:\n\n");
            for c in failures {
                writeln!(
                    out,
                    "- {} / {} shot / {} / {}: {}",
                    c.item,
                    c.shot,
                    strategy_label(c.strategy),
                    c.model,
                    c.error.as_deref().unwrap_or_default()
                )
                .unwrap();
            }
        }
        out
    }

    fn render_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(CSV_HEADER).expect("write to memory");
        for c in &self.cells {
            let stats = c.stats.map_or_else(
                || vec![String::new(); 5],
                |s| {
                    vec![
                        s.seeds.to_string(),
                        fixed6(s.kappa_mean),
                        fixed6(s.kappa_std),
                        fixed6(s.f1_mean),
                        fixed6(s.f1_std),
                    ]
                },
            );
            let mut record = vec![
                c.item.clone(),
                c.shot.to_string(),
                strategy_label(c.strategy).to_string(),
                c.model.label().to_string(),
            ];
            record.extend(stats);
            record.push(c.error.clone().unwrap_or_default());
            writer.write_record(&record).expect("write to memory");
        }
        String::from_utf8(writer.into_inner().expect("flush to memory")).expect("utf-8 csv")
    }
}

/// Reads back the cells written by the CSV rendering.
pub fn parse_report_csv(text: &str) -> Result<Vec<CellReport>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| ReportError::Field { line, message };
        if record.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", CSV_HEADER.len(), record.len())));
        }
        let number = |i: usize| -> Result<f64, ReportError> {
            record[i]
                .parse()
                .map_err(|_| bad(format!("{} is not a number: {:?}", CSV_HEADER[i], &record[i])))
        };
        let shot = record[1]
            .parse()
            .map_err(|_| bad(format!("bad shot count {:?}", &record[1])))?;
        let strategy =
            parse_strategy(&record[2]).ok_or_else(|| bad(format!("bad strategy {:?}", &record[2])))?;
        let model =
            ModelKind::from_label(&record[3]).ok_or_else(|| bad(format!("bad model {:?}", &record[3])))?;
        let stats = if record[4].is_empty() {
            None
        } else {
            Some(CellStats {
                seeds: record[4]
                    .parse()
                    .map_err(|_| bad(format!("bad seed count {:?}", &record[4])))?,
                kappa_mean: number(5)?,
                kappa_std: number(6)?,
                f1_mean: number(7)?,
                f1_std: number(8)?,
            })
        };
        let error = (!record[9].is_empty()).then(|| record[9].to_string());
        cells.push(CellReport {
            item: record[0].to_string(),
            shot,
            strategy,
            model,
            stats,
            error,
        });
    }
    Ok(cells)
}
