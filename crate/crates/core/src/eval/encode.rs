//! Shared feature space for distances: numeric columns standardized with
//! statistics of the real table, discrete columns one-hot.

use crate::data::{ColumnKind, Table};
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnCode {
    Numeric { mean: f64, sd: f64 },
    OneHot { classes: usize },
}

impl ColumnCode {
    pub fn width(&self) -> usize {
        match self {
            ColumnCode::Numeric { .. } => 1,
            ColumnCode::OneHot { classes } => *classes,
        }
    }
}

/// Continuous part (standardized) and discrete part (class indices) kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedRows {
    pub cont: Matrix,
    pub disc: Matrix,
}

impl MixedRows {
    pub fn n_rows(&self) -> usize {
        self.cont.rows.max(self.disc.rows)
    }

    pub fn select(&self, rows: &[usize]) -> MixedRows {
        MixedRows {
            cont: crate::pipeline::gather_rows(&self.cont, rows),
            disc: crate::pipeline::gather_rows(&self.disc, rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    schema_hash: String,
    pub names: Vec<String>,
    pub codes: Vec<ColumnCode>,
}

pub(crate) fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl Encoding {
    /// Fits on `real` for the named columns (schema order is not required).
    pub fn fit(real: &Table, columns: &[String]) -> Result<Self> {
        if real.n_rows() == 0 {
            return Err(Error::Invalid("cannot fit an encoding on an empty table".into()));
        }
        let schema = real.schema();
        let mut codes = Vec::with_capacity(columns.len());
        for name in columns {
            let meta = schema.meta(name)?;
            codes.push(match meta.kind {
                ColumnKind::Continuous | ColumnKind::Integer => {
                    let (mean, sd) = mean_sd(real.column(name)?);
                    ColumnCode::Numeric {
                        mean,
                        sd: if sd > 0.0 { sd } else { 1.0 },
                    }
                }
                ColumnKind::Binary => ColumnCode::OneHot { classes: 2 },
                ColumnKind::Categorical => ColumnCode::OneHot {
                    classes: meta.num_classes.unwrap_or(0),
                },
            });
        }
        Ok(Encoding {
            schema_hash: schema.hash(),
            names: columns.to_vec(),
            codes,
        })
    }

    /// Every schema column.
    pub fn fit_all(real: &Table) -> Result<Self> {
        let names: Vec<String> = real.schema().columns.iter().map(|c| c.name.clone()).collect();
        Self::fit(real, &names)
    }

    pub fn width(&self) -> usize {
        self.codes.iter().map(ColumnCode::width).sum()
    }

    fn check(&self, table: &Table) -> Result<()> {
        if table.schema().hash() != self.schema_hash {
            return Err(Error::SchemaMismatch("table schema differs from the encoding's".into()));
        }
        Ok(())
    }

    pub fn encode(&self, table: &Table) -> Result<Matrix> {
        self.check(table)?;
        let n = table.n_rows();
        let mut m = Matrix::zeros(n, self.width());
        let mut off = 0;
        for (name, code) in self.names.iter().zip(&self.codes) {
            let col = table.column(name)?;
            for (r, &v) in col.iter().enumerate() {
                match code {
                    ColumnCode::Numeric { mean, sd } => m.set(r, off, (v - mean) / sd),
                    ColumnCode::OneHot { .. } => m.set(r, off + v as usize, 1.0),
                }
            }
            off += code.width();
        }
        Ok(m)
    }

    pub fn mixed(&self, table: &Table) -> Result<MixedRows> {
        self.check(table)?;
        let n = table.n_rows();
        let nc = self
            .codes
            .iter()
            .filter(|c| matches!(c, ColumnCode::Numeric { .. }))
            .count();
        let mut cont = Matrix::zeros(n, nc);
        let mut disc = Matrix::zeros(n, self.codes.len() - nc);
        let (mut ci, mut di) = (0, 0);
        for (name, code) in self.names.iter().zip(&self.codes) {
            let col = table.column(name)?;
            match code {
                ColumnCode::Numeric { mean, sd } => {
                    for (r, &v) in col.iter().enumerate() {
                        cont.set(r, ci, (v - mean) / sd);
                    }
                    ci += 1;
                }
                ColumnCode::OneHot { .. } => {
                    for (r, &v) in col.iter().enumerate() {
                        disc.set(r, di, v);
                    }
                    di += 1;
                }
            }
        }
        Ok(MixedRows { cont, disc })
    }
}
