use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use crate::control::ControlTargets;
use crate::data::{format_value, ColumnKind, DatasetSchema, Table};
use crate::error::{Error, Result};
use crate::objective::InducedQuantities;

/// Ground-truth columns, evaluated from the scenario on the emitted covariates.
pub const TRUTH_COLUMNS: [&str; 3] = ["tau__truth", "kappa__truth", "log_alpha__truth"];
/// Generator-induced columns (decoder head means, outcome scale).
pub const THETA_COLUMNS: [&str; 3] = ["tau__theta", "kappa__theta", "log_alpha__theta"];

/// Generated rows plus both potential outcomes, the scenario's per-row
/// truth and the quantities the decoders actually induced.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTable {
    pub table: Table,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub truth: ControlTargets,
    pub theta: InducedQuantities,
}

pub fn potential_outcome_columns(outcome: &str) -> [String; 2] {
    [format!("{outcome}__0"), format!("{outcome}__1")]
}

impl SyntheticTable {
    pub fn new(
        table: Table,
        y0: Vec<f64>,
        y1: Vec<f64>,
        truth: ControlTargets,
        tau_theta: Vec<f64>,
        kappa_theta: Vec<f64>,
        log_alpha_theta: Vec<f64>,
    ) -> Self {
        let theta = InducedQuantities {
            tau_residual: tau_theta.iter().zip(&truth.tau).map(|(a, b)| a - b).collect(),
            kappa_residual: kappa_theta.iter().zip(&truth.kappa).map(|(a, b)| a - b).collect(),
            tau_theta,
            kappa_theta,
            log_alpha_theta,
        };
        SyntheticTable {
            table,
            y0,
            y1,
            truth,
            theta,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    pub fn treatment(&self) -> &[f64] {
        self.table.treatment()
    }

    /// Mean of the per-row ground-truth tau.
    pub fn true_ate(&self) -> f64 {
        if self.truth.tau.is_empty() {
            return 0.0;
        }
        self.truth.tau.iter().sum::<f64>() / self.truth.tau.len() as f64
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let schema = self.table.schema();
        let mut wtr = csv::Writer::from_writer(writer);
        let po = potential_outcome_columns(&schema.outcome);
        let header: Vec<&str> = schema
            .columns
            .iter()
            .map(|c| c.name.as_str())
            .chain(po.iter().map(String::as_str))
            .chain(TRUTH_COLUMNS)
            .chain(THETA_COLUMNS)
            .collect();
        wtr.write_record(&header)?;
        let labels: Vec<Vec<String>> = schema.columns.iter().map(|c| c.labels()).collect();
        let oi = schema.index_of(&schema.outcome).expect("validated schema");
        let om = &schema.columns[oi];
        let cols = self.table.columns();
        for r in 0..self.n_rows() {
            let mut rec: Vec<String> = schema
                .columns
                .iter()
                .enumerate()
                .map(|(j, m)| format_value(m, &labels[j], cols[j][r]))
                .collect();
            rec.push(format_value(om, &labels[oi], self.y0[r]));
            rec.push(format_value(om, &labels[oi], self.y1[r]));
            for v in [
                self.truth.tau[r],
                self.truth.kappa[r],
                self.truth.log_alpha[r],
                self.theta.tau_theta[r],
                self.theta.kappa_theta[r],
                self.theta.log_alpha_theta[r],
            ] {
                rec.push(format!("{v}"));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: Arc<DatasetSchema>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::read_csv(f, schema)
    }

    /// Reads a CSV written by `write_csv`; the base table is parsed by the
    /// ordinary reader, the extra columns in a second pass.
    pub fn read_csv<R: Read>(mut reader: R, schema: Arc<DatasetSchema>) -> Result<Self> {
        let mut buf = Vec::new();
        reader.read_to_end(&mut buf).map_err(|e| Error::io("<csv reader>", e))?;
        let table = Table::read_csv(buf.as_slice(), schema.clone())?;

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(buf.as_slice());
        let headers = rdr.headers()?.clone();
        let po = potential_outcome_columns(&schema.outcome);
        let names: Vec<&str> = po
            .iter()
            .map(String::as_str)
            .chain(TRUTH_COLUMNS)
            .chain(THETA_COLUMNS)
            .collect();
        let pos = names
            .iter()
            .map(|n| {
                headers
                    .iter()
                    .position(|h| h.trim() == *n)
                    .ok_or_else(|| Error::SchemaMismatch(format!("synthetic CSV is missing column `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let om = schema.meta(&schema.outcome)?;
        let lookup: Option<HashMap<String, usize>> = (om.kind == ColumnKind::Categorical)
            .then(|| om.labels().into_iter().enumerate().map(|(i, l)| (l, i)).collect());

        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(table.n_rows()); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (k, &p) in pos.iter().enumerate() {
                let cell = rec.get(p).unwrap_or("").trim();
                let err = |message: String| Error::Cell {
                    row,
                    column: names[k].to_string(),
                    message,
                };
                let v = match (&lookup, k < 2) {
                    (Some(map), true) => {
                        *map.get(cell).ok_or_else(|| err(format!("unknown category `{cell}`")))? as f64
                    }
                    _ => cell
                        .parse::<f64>()
                        .map_err(|_| err(format!("cannot parse `{cell}` as a number")))?,
                };
                cols[k].push(v);
            }
        }
        let mut it = cols.into_iter();
        let mut next = || it.next().expect("column count fixed above");
        let (y0, y1) = (next(), next());
        let truth = ControlTargets {
            tau: next(),
            kappa: next(),
            log_alpha: next(),
        };
        let (tau_theta, kappa_theta, log_alpha_theta) = (next(), next(), next());
        Ok(Self::new(table, y0, y1, truth, tau_theta, kappa_theta, log_alpha_theta))
    }
}
