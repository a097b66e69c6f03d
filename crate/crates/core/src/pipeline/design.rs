//! Mapping between raw tables and the matrices the two generators consume.

use crate::cvae::{HeadKind, TargetSpec};
use crate::data::{ColumnKind, ColumnState, PreprocessState, Table};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Column bookkeeping derived from a fitted preprocessing state.
#[derive(Debug, Clone)]
pub struct Design {
    covariates: Vec<ColumnState>,
    outcome: ColumnState,
}

fn head_kind(st: &ColumnState) -> HeadKind {
    match st.kind {
        ColumnKind::Continuous | ColumnKind::Integer => HeadKind::Gaussian,
        ColumnKind::Binary => HeadKind::Binary,
        ColumnKind::Categorical => HeadKind::Categorical(st.categories.len()),
    }
}

impl Design {
    pub fn new(prep: &PreprocessState) -> Result<Self> {
        let covariates = prep
            .schema
            .covariates
            .iter()
            .map(|c| prep.column(c).cloned())
            .collect::<Result<Vec<_>>>()?;
        if covariates.is_empty() {
            return Err(Error::Schema("at least one covariate is required".into()));
        }
        let outcome = prep.column(&prep.schema.outcome)?.clone();
        if outcome.kind == ColumnKind::Categorical && outcome.categories.len() > 2 {
            return Err(Error::Invalid(format!(
                "outcome `{}` has {} classes; potential-outcome heads need a binary or numeric outcome",
                outcome.name,
                outcome.categories.len()
            )));
        }
        Ok(Design { covariates, outcome })
    }

    pub fn covariates(&self) -> &[ColumnState] {
        &self.covariates
    }

    pub fn outcome(&self) -> &ColumnState {
        &self.outcome
    }

    pub fn covariate_specs(&self) -> Vec<TargetSpec> {
        self.covariates
            .iter()
            .map(|c| TargetSpec {
                name: c.name.clone(),
                kind: head_kind(c),
            })
            .collect()
    }

    pub fn outcome_spec(&self) -> TargetSpec {
        TargetSpec {
            name: self.outcome.name.clone(),
            kind: head_kind(&self.outcome),
        }
    }

    /// Multiplier taking head-mean differences to the outcome's raw scale.
    pub fn outcome_scale(&self) -> f64 {
        if self.outcome.kind.is_numeric() {
            self.outcome.std
        } else {
            1.0
        }
    }

    /// Width of the one-hot covariate block (without T).
    pub fn covariate_width(&self) -> usize {
        self.covariates.iter().map(ColumnState::width).sum()
    }

    /// One column per covariate in model space: standardized numerics, 0/1, class indices.
    pub fn covariate_targets(&self, table: &Table) -> Result<Matrix> {
        let n = table.n_rows();
        let cols = self
            .covariates
            .iter()
            .map(|c| table.column(&c.name))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Matrix::zeros(n, cols.len());
        for r in 0..n {
            for (j, (st, col)) in self.covariates.iter().zip(&cols).enumerate() {
                m.set(r, j, st.encode(col[r]));
            }
        }
        Ok(m)
    }

    pub fn outcome_targets(&self, table: &Table) -> Result<Matrix> {
        let col = table.column(&self.outcome.name)?;
        Matrix::from_vec(col.len(), 1, col.iter().map(|&v| self.outcome.encode(v)).collect())
    }

    /// Covariate block with categoricals one-hot expanded, followed by T.
    pub fn condition(&self, targets: &Matrix, t: &[f64]) -> Matrix {
        let w = self.covariate_width() + 1;
        let mut m = Matrix::zeros(targets.rows, w);
        for r in 0..targets.rows {
            let row = m.row_mut(r);
            let mut c = 0;
            for (j, st) in self.covariates.iter().enumerate() {
                let v = targets.get(r, j);
                if st.kind == ColumnKind::Categorical {
                    row[c + v as usize] = 1.0;
                } else {
                    row[c] = v;
                }
                c += st.width();
            }
            row[c] = t[r];
        }
        m
    }

    /// Model-space covariates to raw values (clipped, rounded) and back, so
    /// conditioning sees exactly what lands in the output table.
    pub fn decode_covariates(&self, encoded: &Matrix) -> Result<(Vec<Vec<f64>>, Matrix)> {
        let mut raw = vec![Vec::with_capacity(encoded.rows); self.covariates.len()];
        let mut re = Matrix::zeros(encoded.rows, self.covariates.len());
        for r in 0..encoded.rows {
            for (j, st) in self.covariates.iter().enumerate() {
                let v = st.decode(encoded.get(r, j))?;
                raw[j].push(v);
                re.set(r, j, st.encode(v));
            }
        }
        Ok((raw, re))
    }
}

pub fn gather_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols);
    for &r in rows {
        data.extend_from_slice(m.row(r));
    }
    Matrix {
        rows: rows.len(),
        cols: m.cols,
        data,
    }
}
