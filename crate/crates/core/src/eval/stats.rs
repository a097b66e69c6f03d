//! Small statistical building blocks shared by the evaluators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nn::loss::sigmoid;
use crate::nn::Matrix;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Pearson correlation; `None` when either side has sd < 1e-12.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (sa, sb) = (sd(a), sd(b));
    if a.len() < 2 || !(sa >= 1e-12 && sb >= 1e-12) {
        return None;
    }
    let (ma, mb) = (mean(a), mean(b));
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Some((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, q)
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Mann-Whitney AUC with midranks for ties: the probability that a random
/// positive scores above a random negative, ties counted one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Invalid("AUC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|a, b| scores[*a].total_cmp(&scores[*b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks are 1-based: i+1 ..= j+1
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += idx[i..=j].iter().filter(|k| labels[**k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Trapezoid rule on a uniform grid with spacing `h`.
pub fn trapezoid(y: &[f64], h: f64) -> f64 {
    if y.len() < 2 {
        return 0.0;
    }
    h * (y.iter().sum::<f64>() - 0.5 * (y[0] + y[y.len() - 1]))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Logistic regression fitted by iteratively reweighted least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct Logistic {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

pub const RIDGE: f64 = 1e-6;
pub const MAX_IRLS_ITER: usize = 100;

impl Logistic {
    /// Newton steps on the ridge-penalized log-likelihood; the intercept is
    /// not penalized.
    pub fn fit(x: &Matrix, y: &[f64], ridge: f64, max_iter: usize) -> Result<Self> {
        if x.rows != y.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.rows, y.len())));
        }
        let pos = y.iter().filter(|v| **v == 1.0).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Invalid("logistic regression needs both classes".into()));
        }
        let p = x.cols + 1;
        let mut beta = DVector::<f64>::zeros(p);
        let mut iterations = 0;
        for it in 0..max_iter {
            iterations = it + 1;
            let mut h = DMatrix::<f64>::zeros(p, p);
            let mut g = DVector::<f64>::zeros(p);
            let mut row = vec![1.0; p];
            for r in 0..x.rows {
                row[1..].copy_from_slice(x.row(r));
                let eta: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                let mu = sigmoid(eta);
                let w = (mu * (1.0 - mu)).max(1e-12);
                for i in 0..p {
                    g[i] += row[i] * (y[r] - mu);
                    let wi = w * row[i];
                    for j in 0..=i {
                        h[(i, j)] += wi * row[j];
                    }
                }
            }
            for i in 0..p {
                for j in 0..i {
                    h[(j, i)] = h[(i, j)];
                }
                if i > 0 {
                    h[(i, i)] += ridge;
                    g[i] -= ridge * beta[i];
                }
            }
            let step = match h.clone().cholesky() {
                Some(c) => c.solve(&g),
                None => h
                    .lu()
                    .solve(&g)
                    .ok_or_else(|| Error::Numerical("singular IRLS system".into()))?,
            };
            if !step.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical("non-finite IRLS step".into()));
            }
            beta += &step;
            if step.amax() < 1e-8 {
                break;
            }
        }
        Ok(Logistic {
            intercept: beta[0],
            coef: beta.iter().skip(1).copied().collect(),
            iterations,
        })
    }

    pub fn linear_predictor(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows)
            .map(|r| self.intercept + x.row(r).iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.random_range(2..50);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6)) as f64).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random()).collect();
            l[0] = true;
            l[1] = false;
            assert!((auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }
        assert_eq!(auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.5], &[true, true]).is_err());
    }

    #[test]
    fn quantile_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.05) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn pearson_constant_is_none() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn logistic_recovers_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5000;
        let mut x = Matrix::zeros(n, 2);
        let mut y = vec![0.0; n];
        for r in 0..n {
            let a: f64 = rng.random_range(-2.0..2.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            x.set(r, 0, a);
            x.set(r, 1, b);
            y[r] = if rng.random::<f64>() < sigmoid(0.5 + 1.5 * a - b) {
                1.0
            } else {
                0.0
            };
        }
        let m = Logistic::fit(&x, &y, RIDGE, MAX_IRLS_ITER).unwrap();
        assert!((m.intercept - 0.5).abs() < 0.15);
        assert!((m.coef[0] - 1.5).abs() < 0.15);
        assert!((m.coef[1] + 1.0).abs() < 0.15);
        assert!(m.iterations < 20);
    }

    #[test]
    fn logistic_score_equation_holds_at_optimum() {
        // at the ridge-free optimum the residuals sum to zero
        let x = Matrix::from_vec(6, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = [0.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let m = Logistic::fit(&x, &y, 0.0, MAX_IRLS_ITER).unwrap();
        let p = m.predict(&x);
        let resid: f64 = p.iter().zip(&y).map(|(a, b)| b - a).sum();
        assert!(resid.abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn auc_is_rank_invariant(s in prop::collection::vec(-5.0f64..5.0, 4..30), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut l: Vec<bool> = (0..s.len()).map(|_| rng.random()).collect();
            l[0] = true;
            l[1] = false;
            let a = auc(&s, &l).unwrap();
            let t: Vec<f64> = s.iter().map(|v| v.exp()).collect();
            prop_assert!((a - auc(&t, &l).unwrap()).abs() < 1e-12);
            let flipped: Vec<bool> = l.iter().map(|v| !v).collect();
            prop_assert!((a + auc(&s, &flipped).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
