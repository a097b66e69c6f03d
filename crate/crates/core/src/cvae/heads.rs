use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::{sigmoid, LN_2PI};
use crate::nn::Matrix;

/// Likelihood family of one modeled variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "classes", rename_all = "lowercase")]
pub enum HeadKind {
    Gaussian,
    Binary,
    Categorical(usize),
}

impl HeadKind {
    /// Number of decoder outputs for one arm.
    pub fn param_width(self) -> usize {
        match self {
            HeadKind::Gaussian => 2,
            HeadKind::Binary => 1,
            HeadKind::Categorical(k) => k,
        }
    }

    /// Width of the encoder-side representation of an observed value.
    pub fn input_width(self) -> usize {
        match self {
            HeadKind::Categorical(k) => k,
            _ => 1,
        }
    }
}

/// Column offsets for the head parameters inside the decoder output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub kinds: Vec<HeadKind>,
    pub arms: usize,
    offsets: Vec<usize>,
    arm_stride: usize,
}

impl HeadLayout {
    pub fn new(kinds: Vec<HeadKind>, arms: usize) -> Self {
        let mut offsets = Vec::with_capacity(kinds.len());
        let mut acc = 0;
        for k in &kinds {
            offsets.push(acc);
            acc += k.param_width();
        }
        HeadLayout {
            kinds,
            arms,
            offsets,
            arm_stride: acc,
        }
    }

    pub fn width(&self) -> usize {
        self.arm_stride * self.arms
    }

    /// First decoder column of `head` for `arm`.
    #[inline]
    pub fn offset(&self, head: usize, arm: usize) -> usize {
        arm * self.arm_stride + self.offsets[head]
    }

    /// Columns holding log-variances (subject to clamping).
    pub fn logvar_columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        for arm in 0..self.arms {
            for (h, k) in self.kinds.iter().enumerate() {
                if *k == HeadKind::Gaussian {
                    cols.push(self.offset(h, arm) + 1);
                }
            }
        }
        cols
    }
}

/// Decoder outputs after clamping, one row per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub layout: HeadLayout,
    pub params: Matrix,
}

impl HeadOutputs {
    pub fn n_rows(&self) -> usize {
        self.params.rows
    }

    pub fn arms(&self) -> usize {
        self.layout.arms
    }

    pub fn logit(&self, row: usize, head: usize, arm: usize) -> f64 {
        self.params.get(row, self.layout.offset(head, arm))
    }

    pub fn logits(&self, row: usize, head: usize, arm: usize) -> &[f64] {
        let o = self.layout.offset(head, arm);
        &self.params.row(row)[o..o + self.layout.kinds[head].param_width()]
    }

    /// (mu, logvar) of a Gaussian head.
    pub fn gaussian(&self, row: usize, head: usize, arm: usize) -> (f64, f64) {
        let o = self.layout.offset(head, arm);
        (self.params.get(row, o), self.params.get(row, o + 1))
    }

    /// Conditional mean: mu for Gaussian heads, P(value = 1) for binary and
    /// two-class heads. Multiclass heads have no scalar mean.
    pub fn mean(&self, row: usize, head: usize, arm: usize) -> Result<f64> {
        match self.layout.kinds[head] {
            HeadKind::Gaussian => Ok(self.gaussian(row, head, arm).0),
            HeadKind::Binary => Ok(sigmoid(self.logit(row, head, arm))),
            HeadKind::Categorical(2) => {
                let l = self.logits(row, head, arm);
                Ok(sigmoid(l[1] - l[0]))
            }
            HeadKind::Categorical(k) => Err(Error::Invalid(format!("a {k}-class head has no scalar mean"))),
        }
    }

    /// Accumulates `scale · d mean / d params` into `grad`.
    pub fn mean_backward(&self, row: usize, head: usize, arm: usize, scale: f64, grad: &mut Matrix) -> Result<()> {
        let o = self.layout.offset(head, arm);
        match self.layout.kinds[head] {
            HeadKind::Gaussian => grad.add_at(row, o, scale),
            HeadKind::Binary => {
                let p = sigmoid(self.logit(row, head, arm));
                grad.add_at(row, o, scale * p * (1.0 - p));
            }
            HeadKind::Categorical(2) => {
                let l = self.logits(row, head, arm);
                let p = sigmoid(l[1] - l[0]);
                let d = scale * p * (1.0 - p);
                grad.add_at(row, o + 1, d);
                grad.add_at(row, o, -d);
            }
            HeadKind::Categorical(k) => return Err(Error::Invalid(format!("a {k}-class head has no scalar mean"))),
        }
        Ok(())
    }

    /// Log-likelihood of observed `value` under one head.
    pub fn log_likelihood(&self, row: usize, head: usize, arm: usize, value: f64) -> f64 {
        let o = self.layout.offset(head, arm);
        let p = self.params.row(row);
        match self.layout.kinds[head] {
            HeadKind::Gaussian => {
                let (mu, lv) = (p[o], p[o + 1]);
                -0.5 * (LN_2PI + lv + (value - mu).powi(2) * (-lv).exp())
            }
            HeadKind::Binary => -crate::nn::loss::bernoulli_nll(value, p[o]).0,
            HeadKind::Categorical(k) => {
                let l = &p[o..o + k];
                l[value as usize] - crate::nn::loss::logsumexp(l)
            }
        }
    }

    /// Accumulates `scale · d loglik / d params` into `grad`.
    pub fn log_likelihood_backward(
        &self,
        row: usize,
        head: usize,
        arm: usize,
        value: f64,
        scale: f64,
        grad: &mut Matrix,
    ) {
        let o = self.layout.offset(head, arm);
        let p = self.params.row(row);
        match self.layout.kinds[head] {
            HeadKind::Gaussian => {
                let (_, gmu, glv) = crate::nn::loss::gaussian_nll(value, p[o], p[o + 1]);
                grad.add_at(row, o, -scale * gmu);
                grad.add_at(row, o + 1, -scale * glv);
            }
            HeadKind::Binary => {
                let (_, g) = crate::nn::loss::bernoulli_nll(value, p[o]);
                grad.add_at(row, o, -scale * g);
            }
            HeadKind::Categorical(k) => {
                let mut g = vec![0.0; k];
                crate::nn::loss::categorical_nll(value as usize, &p[o..o + k], &mut g);
                for (j, gj) in g.iter().enumerate() {
                    grad.add_at(row, o + j, -scale * gj);
                }
            }
        }
    }

    pub fn zero_grad(&self) -> Matrix {
        Matrix::zeros(self.params.rows, self.params.cols)
    }

    /// Splits rows `[0, n)` and `[n, end)`.
    pub fn split_rows(&self, n: usize) -> (HeadOutputs, HeadOutputs) {
        (
            HeadOutputs {
                layout: self.layout.clone(),
                params: self.params.slice_rows(0, n),
            },
            HeadOutputs {
                layout: self.layout.clone(),
                params: self.params.slice_rows(n, self.params.rows),
            },
        )
    }
}
