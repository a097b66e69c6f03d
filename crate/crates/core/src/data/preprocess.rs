use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ColumnKind, DatasetSchema, Table};
use crate::error::{Error, Result};

/// Per-column preprocessing state. `mean`/`std` are set for numeric columns only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnState {
    pub name: String,
    pub kind: ColumnKind,
    pub mean: f64,
    pub std: f64,
    pub bounds: (f64, f64),
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub schema: DatasetSchema,
    pub schema_hash: String,
    pub columns: Vec<ColumnState>,
}

/// Model-space values, one column per schema column. Numeric columns are
/// standardized; binary and categorical columns keep their raw index.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMatrix {
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl PreprocessState {
    /// Population statistics per numeric column; raw min/max become bounds
    /// when the schema gives none.
    pub fn fit(table: &Table) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::Invalid("cannot fit preprocessing on an empty table".into()));
        }
        let schema = table.schema();
        let mut columns = Vec::with_capacity(schema.columns.len());
        for (meta, values) in schema.columns.iter().zip(table.columns()) {
            let (mut mean, mut std) = (0.0, 1.0);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if meta.kind.is_numeric() {
                let n = values.len() as f64;
                mean = values.iter().sum::<f64>() / n;
                std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                if !(std > 0.0) {
                    return Err(Error::ZeroVariance(meta.name.clone()));
                }
            }
            let bounds = match (meta.kind, meta.bounds) {
                (_, Some(b)) => b,
                (ColumnKind::Binary, None) => (0.0, 1.0),
                (ColumnKind::Categorical, None) => (0.0, (meta.num_classes.unwrap_or(1) - 1) as f64),
                _ => (lo, hi),
            };
            columns.push(ColumnState {
                name: meta.name.clone(),
                kind: meta.kind,
                mean,
                std,
                bounds,
                categories: meta.labels(),
            });
        }
        Ok(PreprocessState {
            schema: (**schema).clone(),
            schema_hash: schema.hash(),
            columns,
        })
    }

    pub fn column(&self, name: &str) -> Result<&ColumnState> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown column `{name}`")))
    }

    fn check_schema(&self, schema: &DatasetSchema) -> Result<()> {
        if schema.hash() != self.schema_hash {
            return Err(Error::SchemaMismatch(
                "table schema differs from the fitted preprocessing state".into(),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, table: &Table) -> Result<EncodedMatrix> {
        self.check_schema(table.schema())?;
        let columns = self
            .columns
            .iter()
            .zip(table.columns())
            .map(|(st, col)| col.iter().map(|&v| st.encode(v)).collect())
            .collect();
        Ok(EncodedMatrix {
            columns,
            n_rows: table.n_rows(),
        })
    }

    pub fn inverse_transform(&self, matrix: &EncodedMatrix) -> Result<Table> {
        if matrix.columns.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "{} encoded columns for {} state columns",
                matrix.columns.len(),
                self.columns.len()
            )));
        }
        let mut columns = Vec::with_capacity(self.columns.len());
        for (st, col) in self.columns.iter().zip(&matrix.columns) {
            let mut out = Vec::with_capacity(col.len());
            for &v in col {
                out.push(st.decode(v)?);
            }
            columns.push(out);
        }
        Table::new(Arc::new(self.schema.clone()), columns)
    }
}

impl ColumnState {
    pub fn encode(&self, raw: f64) -> f64 {
        if self.kind.is_numeric() {
            (raw - self.mean) / self.std
        } else {
            raw
        }
    }

    /// Model space back to raw units: de-standardize and clip; integers are
    /// rounded, fractional binaries thresholded at 0.5.
    pub fn decode(&self, v: f64) -> Result<f64> {
        let (lo, hi) = self.bounds;
        match self.kind {
            ColumnKind::Continuous => Ok((v * self.std + self.mean).clamp(lo, hi)),
            ColumnKind::Integer => Ok((v * self.std + self.mean)
                .clamp(lo, hi)
                .round()
                .clamp(lo.ceil(), hi.floor())),
            ColumnKind::Binary => Ok(if v >= 0.5 { 1.0 } else { 0.0 }),
            ColumnKind::Categorical => {
                if v.fract() != 0.0 || v < 0.0 || v as usize >= self.categories.len() {
                    Err(Error::Invalid(format!(
                        "class index {v} out of range for `{}` ({} classes)",
                        self.name,
                        self.categories.len()
                    )))
                } else {
                    Ok(v)
                }
            }
        }
    }

    /// Number of one-hot slots this column occupies in a flattened design.
    pub fn width(&self) -> usize {
        match self.kind {
            ColumnKind::Categorical => self.categories.len(),
            _ => 1,
        }
    }
}
