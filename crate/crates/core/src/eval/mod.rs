//! Audits of synthetic tables along three axes: distributional fidelity,
//! causal-structure fidelity and record-level privacy.

pub mod causal;
pub mod distributional;
pub mod embedding;
pub mod encode;
pub mod privacy;
pub mod stats;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lower,
    Higher,
    /// Informative only (e.g. propensity AUC).
    None,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Lower => "lower better",
            Direction::Higher => "higher better",
            Direction::None => "NA",
        }
    }
}

/// One reported number. `value` is `None` where the metric is undefined
/// (printed as NA).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub level: String,
    /// Column or pair the value refers to; empty for summary rows.
    pub target: String,
    pub value: Option<f64>,
    pub direction: Direction,
}

impl MetricRow {
    pub fn summary(level: &str, metric: &str, value: Option<f64>, direction: Direction) -> Self {
        MetricRow {
            metric: metric.into(),
            level: level.into(),
            target: String::new(),
            value,
            direction,
        }
    }

    pub fn detail(level: &str, metric: &str, target: &str, value: Option<f64>, direction: Direction) -> Self {
        MetricRow {
            target: target.into(),
            ..Self::summary(level, metric, value, direction)
        }
    }
}

/// A named list of rows, serializable as JSON or flat CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub title: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub rows: Vec<MetricRow>,
}

pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NA".into(),
    }
}

impl Report {
    pub fn new(title: &str) -> Self {
        Report {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    /// Summary row by metric label.
    pub fn get(&self, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.target.is_empty())
            .and_then(|r| r.value)
    }

    pub fn summary_rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.target.is_empty())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Header `metric,level,target,value,direction`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["metric", "level", "target", "value", "direction"])?;
        for r in &self.rows {
            wtr.write_record([
                r.metric.as_str(),
                r.level.as_str(),
                r.target.as_str(),
                &format_metric(r.value),
                r.direction.label(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Side-by-side summary rows of two reports with identical layout.
/// Header `level,metric,direction,<left>,<right>`.
pub fn write_comparison_csv<W: std::io::Write>(left: (&str, &Report), right: (&str, &Report), w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["level", "metric", "direction", left.0, right.0])?;
    for (a, b) in left.1.summary_rows().zip(right.1.summary_rows()) {
        if a.metric != b.metric {
            return Err(Error::Invalid(format!(
                "report rows differ: `{}` vs `{}`",
                a.metric, b.metric
            )));
        }
        wtr.write_record([
            a.level.as_str(),
            a.metric.as_str(),
            a.direction.label(),
            &format_metric(a.value),
            &format_metric(b.value),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
