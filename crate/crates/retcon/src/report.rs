//! Aggregation of query records into per-cell error summaries, and the CSV
//! report.

use std::collections::BTreeMap;

use retcon_core::stats::summarize;
use retcon_core::Technique;
use serde::{Deserialize, Serialize};

use crate::harness::QueryRecord;

pub const REPORT_HEADER: [&str; 6] = ["technique", "example_count", "n", "mse", "ci95", "mean_prompt_chars"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAggregate {
    pub technique: Technique,
    pub example_count: usize,
    /// Successful queries in the group.
    pub n: usize,
    /// Error rows left out of the statistics.
    pub excluded: usize,
    pub mse: f64,
    pub ci95_half_width: f64,
    pub mean_prompt_chars: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("no successful queries for {technique} with {example_count} examples ({excluded} error rows)")]
    EmptyGroup {
        technique: Technique,
        example_count: usize,
        excluded: usize,
    },
    #[error("nothing to report")]
    NoRecords,
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// Per (technique, example count) statistics over successful records,
/// sorted ascending. Groups with no successes are returned separately.
pub fn aggregate_partial(records: &[QueryRecord]) -> (Vec<ConditionAggregate>, Vec<ReportError>) {
    #[derive(Default)]
    struct Group {
        errors: Vec<f64>,
        chars: Vec<f64>,
        excluded: usize,
    }
    let mut groups: BTreeMap<(Technique, usize), Group> = BTreeMap::new();
    for r in records {
        let g = groups.entry((r.key.technique, r.key.example_count)).or_default();
        match r.squared_error() {
            Some(e) => {
                g.errors.push(e);
                g.chars.push(r.prompt_chars as f64);
            }
            None => g.excluded += 1,
        }
    }
    let mut aggregates = Vec::new();
    let mut empty = Vec::new();
    for ((technique, example_count), g) in groups {
        match (summarize(&g.errors), summarize(&g.chars)) {
            (Some(err), Some(chars)) => aggregates.push(ConditionAggregate {
                technique,
                example_count,
                n: err.n,
                excluded: g.excluded,
                mse: err.mean,
                ci95_half_width: err.ci95_half_width,
                mean_prompt_chars: chars.mean,
            }),
            _ => empty.push(ReportError::EmptyGroup {
                technique,
                example_count,
                excluded: g.excluded,
            }),
        }
    }
    (aggregates, empty)
}

/// Like [`aggregate_partial`] but any group without a success is an error.
pub fn aggregate(records: &[QueryRecord]) -> Result<Vec<ConditionAggregate>, ReportError> {
    let (aggregates, mut empty) = aggregate_partial(records);
    if !empty.is_empty() {
        return Err(empty.swap_remove(0));
    }
    if aggregates.is_empty() {
        return Err(ReportError::NoRecords);
    }
    Ok(aggregates)
}

/// CSV with a header row and one row per aggregate, reals at 6 decimals.
pub fn emit_report(aggregates: &[ConditionAggregate]) -> String {
    let mut rows: Vec<&ConditionAggregate> = aggregates.iter().collect();
    rows.sort_by_key(|a| (a.technique, a.example_count));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("in-memory write");
    for a in rows {
        w.write_record([
            a.technique.as_str().to_owned(),
            a.example_count.to_string(),
            a.n.to_string(),
            format!("{:.6}", a.mse),
            format!("{:.6}", a.ci95_half_width),
            format!("{:.6}", a.mean_prompt_chars),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

/// One parsed report row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportRow {
    pub technique: Technique,
    pub example_count: usize,
    pub n: usize,
    pub mse: f64,
    pub ci95: f64,
    pub mean_prompt_chars: f64,
}

pub fn parse_report(document: &str) -> Result<Vec<ReportRow>, ReportError> {
    let mut r = csv::Reader::from_reader(document.as_bytes());
    let header = r.headers().map_err(|e| ReportError::Malformed(e.to_string()))?;
    if header.iter().ne(REPORT_HEADER) {
        return Err(ReportError::Malformed(format!("unexpected header {header:?}")));
    }
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| ReportError::Malformed(e.to_string()))
}

/// Human-readable summary table.
pub fn summary_table(aggregates: &[ConditionAggregate]) -> String {
    let mut out = format!(
        "{:<10} {:>8} {:>6} {:>8} {:>10} {:>10} {:>12}\n",
        "technique", "examples", "n", "errors", "mse", "ci95", "prompt_chars"
    );
    for a in aggregates {
        out.push_str(&format!(
            "{:<10} {:>8} {:>6} {:>8} {:>10.4} {:>10.4} {:>12.1}\n",
            a.technique.as_str(),
            a.example_count,
            a.n,
            a.excluded,
            a.mse,
            a.ci95_half_width,
            a.mean_prompt_chars
        ));
    }
    out
}
