//! Induced causal quantities and the penalty terms of the training objective.

use serde::{Deserialize, Serialize};

use crate::cvae::HeadOutputs;
use crate::error::{Error, Result};
use crate::nn::loss::smooth_l1;
use crate::nn::Matrix;

/// Residual threshold for the smooth-L1 term.
pub const SMOOTH_L1_DELTA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyWeights {
    pub lambda_alpha: f64,
    pub lambda_tau: f64,
    pub lambda_kappa: f64,
    pub tau_mse_weight: f64,
    pub tau_sl1_weight: f64,
    pub tau_var_weight: f64,
    pub kappa_mse_weight: f64,
    pub kappa_sl1_weight: f64,
    pub kappa_var_weight: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            lambda_alpha: 50.0,
            lambda_tau: 1e3,
            lambda_kappa: 1e3,
            tau_mse_weight: 1.0,
            tau_sl1_weight: 1.0,
            tau_var_weight: 1.0,
            kappa_mse_weight: 1.0,
            kappa_sl1_weight: 1.0,
            kappa_var_weight: 1.0,
        }
    }
}

impl PenaltyWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_alpha,
            self.lambda_tau,
            self.lambda_kappa,
            self.tau_mse_weight,
            self.tau_sl1_weight,
            self.tau_var_weight,
            self.kappa_mse_weight,
            self.kappa_sl1_weight,
            self.kappa_var_weight,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("penalty weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn disabled() -> Self {
        PenaltyWeights {
            lambda_alpha: 0.0,
            lambda_tau: 0.0,
            lambda_kappa: 0.0,
            tau_var_weight: 0.0,
            kappa_var_weight: 0.0,
            ..Self::default()
        }
    }
}

/// Per-row induced quantities with their residuals against the targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InducedQuantities {
    pub tau_theta: Vec<f64>,
    pub kappa_theta: Vec<f64>,
    pub log_alpha_theta: Vec<f64>,
    pub tau_residual: Vec<f64>,
    pub kappa_residual: Vec<f64>,
}

fn require_po(out: &HeadOutputs) -> Result<()> {
    if out.arms() != 2 {
        return Err(Error::Invalid("induced effects need potential-outcome heads".into()));
    }
    Ok(())
}

/// τ_θ per row: arm-1 mean minus arm-0 mean of the outcome head.
pub fn induced_tau(out: &HeadOutputs, head: usize) -> Result<Vec<f64>> {
    require_po(out)?;
    (0..out.n_rows())
        .map(|r| Ok(out.mean(r, head, 1)? - out.mean(r, head, 0)?))
        .collect()
}

pub fn induced_tau_backward(out: &HeadOutputs, head: usize, dtau: &[f64], grad: &mut Matrix) -> Result<()> {
    for (r, &d) in dtau.iter().enumerate() {
        out.mean_backward(r, head, 1, d, grad)?;
        out.mean_backward(r, head, 0, -d, grad)?;
    }
    Ok(())
}

fn check_pair(obs: &HeadOutputs, flip: &HeadOutputs, arms: &[u8]) -> Result<()> {
    require_po(obs)?;
    require_po(flip)?;
    if obs.n_rows() != flip.n_rows() || obs.n_rows() != arms.len() || obs.layout != flip.layout {
        return Err(Error::Shape(
            "observed and flipped decodes have different layouts".into(),
        ));
    }
    Ok(())
}

/// κ_θ per row: the observed-arm head mean under conditioning T=1 minus
/// under T=0. `obs` was decoded with T=arms[r], `flip` with 1−arms[r].
pub fn induced_kappa(obs: &HeadOutputs, flip: &HeadOutputs, head: usize, arms: &[u8]) -> Result<Vec<f64>> {
    check_pair(obs, flip, arms)?;
    arms.iter()
        .enumerate()
        .map(|(r, &t)| {
            let a = t as usize;
            let (m_obs, m_flip) = (obs.mean(r, head, a)?, flip.mean(r, head, a)?);
            Ok(if t == 1 { m_obs - m_flip } else { m_flip - m_obs })
        })
        .collect()
}

pub fn induced_kappa_backward(
    obs: &HeadOutputs,
    flip: &HeadOutputs,
    head: usize,
    arms: &[u8],
    dkappa: &[f64],
    grad_obs: &mut Matrix,
    grad_flip: &mut Matrix,
) -> Result<()> {
    check_pair(obs, flip, arms)?;
    for (r, (&t, &d)) in arms.iter().zip(dkappa).enumerate() {
        let sign = if t == 1 { 1.0 } else { -1.0 };
        obs.mean_backward(r, head, t as usize, sign * d, grad_obs)?;
        flip.mean_backward(r, head, t as usize, -sign * d, grad_flip)?;
    }
    Ok(())
}

/// Value of a composite residual penalty and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue {
    /// λ·mean[w_mse·Δ² + w_sl1·SmoothL1(Δ)]
    pub mean_term: f64,
    /// λ_var·Var(Δ), population variance
    pub var_term: f64,
    pub grad: Vec<f64>,
}

impl PenaltyValue {
    pub fn total(&self) -> f64 {
        self.mean_term + self.var_term
    }
}

pub fn composite_penalty(delta: &[f64], lambda: f64, w_mse: f64, w_sl1: f64, w_var: f64) -> Result<PenaltyValue> {
    if delta.is_empty() {
        return Err(Error::Invalid("penalty over an empty batch".into()));
    }
    let n = delta.len() as f64;
    let mean = delta.iter().sum::<f64>() / n;
    let mut acc = 0.0;
    let mut var = 0.0;
    let mut grad = Vec::with_capacity(delta.len());
    for &d in delta {
        let (s, ds) = smooth_l1(d, SMOOTH_L1_DELTA);
        acc += w_mse * d * d + w_sl1 * s;
        var += (d - mean).powi(2);
        grad.push(lambda * (2.0 * w_mse * d + w_sl1 * ds) / n + w_var * 2.0 * (d - mean) / n);
    }
    Ok(PenaltyValue {
        mean_term: lambda * acc / n,
        var_term: w_var * var / n,
        grad,
    })
}

pub fn tau_penalty(delta: &[f64], w: &PenaltyWeights) -> Result<PenaltyValue> {
    composite_penalty(
        delta,
        w.lambda_tau,
        w.tau_mse_weight,
        w.tau_sl1_weight,
        w.tau_var_weight,
    )
}

pub fn kappa_penalty(delta: &[f64], w: &PenaltyWeights) -> Result<PenaltyValue> {
    composite_penalty(
        delta,
        w.lambda_kappa,
        w.kappa_mse_weight,
        w.kappa_sl1_weight,
        w.kappa_var_weight,
    )
}

/// log p(x | z, T=1) − log p(x | z, T=0) per row, summed over features.
/// `targets` uses the same per-head encoding as reconstruction.
pub fn log_density_ratio(targets: &Matrix, out_t0: &HeadOutputs, out_t1: &HeadOutputs) -> Result<Vec<f64>> {
    if out_t0.layout != out_t1.layout || out_t0.n_rows() != targets.rows || out_t1.n_rows() != targets.rows {
        return Err(Error::Shape("log density ratio needs matching decodes".into()));
    }
    if targets.cols != out_t0.layout.kinds.len() {
        return Err(Error::Shape(format!(
            "{} target columns for {} heads",
            targets.cols,
            out_t0.layout.kinds.len()
        )));
    }
    Ok((0..targets.rows)
        .map(|r| {
            (0..targets.cols)
                .map(|h| {
                    let x = targets.get(r, h);
                    out_t1.log_likelihood(r, h, 0, x) - out_t0.log_likelihood(r, h, 0, x)
                })
                .sum()
        })
        .collect())
}

pub fn log_density_ratio_backward(
    targets: &Matrix,
    out_t0: &HeadOutputs,
    out_t1: &HeadOutputs,
    dratio: &[f64],
    grad_t0: &mut Matrix,
    grad_t1: &mut Matrix,
) {
    for (r, &d) in dratio.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for h in 0..targets.cols {
            let x = targets.get(r, h);
            out_t1.log_likelihood_backward(r, h, 0, x, d, grad_t1);
            out_t0.log_likelihood_backward(r, h, 0, x, -d, grad_t0);
        }
    }
}

/// λ_α · mean[(log α_θ − log α)²] and its gradient w.r.t. log α_θ.
pub fn overlap_penalty(log_alpha_theta: &[f64], target: &[f64], lambda: f64) -> Result<(f64, Vec<f64>)> {
    if log_alpha_theta.len() != target.len() {
        return Err(Error::Shape("overlap penalty lengths differ".into()));
    }
    if target.is_empty() {
        return Ok((0.0, Vec::new()));
    }
    let n = target.len() as f64;
    let mut v = 0.0;
    let grad = log_alpha_theta
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let r = a - b;
            v += r * r;
            lambda * 2.0 * r / n
        })
        .collect();
    Ok((lambda * v / n, grad))
}

/// Weighted contributions of every term of the objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    /// reconstruction + λ_KL · KL
    pub vae: f64,
    /// unweighted KL, for diagnostics only
    pub kl: f64,
    pub l_alpha: f64,
    pub l_tau_mean: f64,
    pub l_tau_var: f64,
    pub l_kappa_mean: f64,
    pub l_kappa_var: f64,
}

impl LossComponents {
    pub fn is_finite(&self) -> bool {
        [
            self.vae,
            self.kl,
            self.l_alpha,
            self.l_tau_mean,
            self.l_tau_var,
            self.l_kappa_mean,
            self.l_kappa_var,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        LossComponents {
            vae: self.vae * s,
            kl: self.kl * s,
            l_alpha: self.l_alpha * s,
            l_tau_mean: self.l_tau_mean * s,
            l_tau_var: self.l_tau_var * s,
            l_kappa_mean: self.l_kappa_mean * s,
            l_kappa_var: self.l_kappa_var * s,
        }
    }

    pub fn add(&mut self, o: &LossComponents) {
        self.vae += o.vae;
        self.kl += o.kl;
        self.l_alpha += o.l_alpha;
        self.l_tau_mean += o.l_tau_mean;
        self.l_tau_var += o.l_tau_var;
        self.l_kappa_mean += o.l_kappa_mean;
        self.l_kappa_var += o.l_kappa_var;
    }
}

/// Sum of the VAE loss and every weighted penalty.
pub fn total_loss(c: &LossComponents) -> f64 {
    c.vae + c.l_alpha + c.l_tau_mean + c.l_tau_var + c.l_kappa_mean + c.l_kappa_var
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::{HeadKind, HeadLayout};
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn po(kind: HeadKind, rows: Vec<Vec<f64>>) -> HeadOutputs {
        HeadOutputs {
            layout: HeadLayout::new(vec![kind], 2),
            params: Matrix::from_rows(&rows).unwrap(),
        }
    }

    fn single(kinds: Vec<HeadKind>, rows: Vec<Vec<f64>>) -> HeadOutputs {
        HeadOutputs {
            layout: HeadLayout::new(kinds, 1),
            params: Matrix::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn tau_examples() {
        let g = po(HeadKind::Gaussian, vec![vec![0.3, 0.0, 0.5, 0.0]]);
        assert!((induced_tau(&g, 0).unwrap()[0] - 0.2).abs() < 1e-15);
        let b = po(HeadKind::Binary, vec![vec![0.0, 0.0]]);
        assert_eq!(induced_tau(&b, 0).unwrap()[0], 0.0);
        let b = po(HeadKind::Binary, vec![vec![logit(0.1), logit(0.156)]]);
        assert!((induced_tau(&b, 0).unwrap()[0] - 0.056).abs() < 1e-12);
        let not_po = single(vec![HeadKind::Binary], vec![vec![0.0]]);
        assert!(induced_tau(&not_po, 0).is_err());
    }

    #[test]
    fn kappa_examples() {
        let same = po(HeadKind::Gaussian, vec![vec![0.2, 0.0, 0.4, 0.0]; 2]);
        assert_eq!(induced_kappa(&same, &same, 0, &[0, 1]).unwrap(), vec![0.0, 0.0]);
        // row observed under T=1: arm-1 mean 0.12 there, 0.10 under T=0
        let obs = po(HeadKind::Gaussian, vec![vec![0.0, 0.0, 0.12, 0.0]]);
        let flip = po(HeadKind::Gaussian, vec![vec![0.0, 0.0, 0.10, 0.0]]);
        let k = induced_kappa(&obs, &flip, 0, &[1]).unwrap()[0];
        assert!((k - 0.02).abs() < 1e-15);
        let swapped = induced_kappa(&flip, &obs, 0, &[1]).unwrap()[0];
        assert_eq!(swapped, -k);
        // observed under T=0 with the arm-0 head
        let obs0 = po(HeadKind::Gaussian, vec![vec![0.10, 0.0, 0.0, 0.0]]);
        let flip0 = po(HeadKind::Gaussian, vec![vec![0.12, 0.0, 0.0, 0.0]]);
        assert!((induced_kappa(&obs0, &flip0, 0, &[0]).unwrap()[0] - 0.02).abs() < 1e-15);
        assert!(induced_kappa(&obs, &flip, 0, &[1, 0]).is_err());
    }

    #[test]
    fn penalty_examples() {
        let w = PenaltyWeights {
            lambda_tau: 1.0,
            lambda_kappa: 1.0,
            ..PenaltyWeights::default()
        };
        assert_eq!(tau_penalty(&[0.0; 3], &w).unwrap().total(), 0.0);
        let c = tau_penalty(&[0.3; 4], &w).unwrap();
        assert!(c.var_term.abs() < 1e-15 && c.mean_term > 0.0);
        let p = tau_penalty(&[-1.0, 1.0], &w).unwrap();
        assert_eq!((p.mean_term, p.var_term, p.total()), (1.5, 1.0, 2.5));
        assert_eq!(kappa_penalty(&[-1.0, 1.0], &w).unwrap().total(), 2.5);
        assert_eq!(kappa_penalty(&[0.0], &w).unwrap().total(), 0.0);
        assert!(tau_penalty(&[], &w).is_err());
    }

    #[test]
    fn density_ratio_examples() {
        let same = single(vec![HeadKind::Gaussian, HeadKind::Binary], vec![vec![0.3, 0.2, 1.0]]);
        let x = Matrix::from_rows(&[vec![0.5, 1.0]]).unwrap();
        assert_eq!(log_density_ratio(&x, &same, &same).unwrap(), vec![0.0]);

        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let t1 = single(vec![HeadKind::Binary], vec![vec![logit(0.8)]]);
        let t0 = single(vec![HeadKind::Binary], vec![vec![logit(0.5)]]);
        let r = log_density_ratio(&x, &t0, &t1).unwrap()[0];
        assert!((r - (0.8f64 / 0.5).ln()).abs() < 1e-12);
        assert!((r - 0.4700).abs() < 1e-4);

        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let t1 = single(vec![HeadKind::Gaussian], vec![vec![0.0, 0.0]]);
        let t0 = single(vec![HeadKind::Gaussian], vec![vec![1.0, 0.0]]);
        assert!((log_density_ratio(&x, &t0, &t1).unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(overlap_penalty(&[0.4, -1.0], &[0.4, -1.0], 5.0).unwrap().0, 0.0);
        assert_eq!(overlap_penalty(&[1.0, -1.0], &[0.0, 0.0], 1.0).unwrap().0, 1.0);
        let (v, _) = overlap_penalty(&[0.1, -0.1], &[0.0, 0.0], 50.0).unwrap();
        assert!((v - 0.01 * 50.0).abs() < 1e-12);
    }

    #[test]
    fn total_is_sum_of_components() {
        let vae_only = LossComponents {
            vae: 3.25,
            kl: 0.5,
            ..Default::default()
        };
        assert_eq!(total_loss(&vae_only), 3.25);
        let pen = LossComponents {
            l_alpha: 0.1,
            l_tau_mean: 0.2,
            l_tau_var: 0.3,
            l_kappa_mean: 0.4,
            l_kappa_var: 0.5,
            ..Default::default()
        };
        assert!((total_loss(&pen) - 1.5).abs() < 1e-12);
        let mut both = vae_only;
        both.add(&pen);
        let parts = [
            both.vae,
            both.l_alpha,
            both.l_tau_mean,
            both.l_tau_var,
            both.l_kappa_mean,
            both.l_kappa_var,
        ];
        assert!((total_loss(&both) - parts.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn doubling_lambda_alpha_doubles_overlap_only() {
        let theta = [0.3, -0.2, 0.8];
        let target = [0.0, 0.1, 0.5];
        let (a, _) = overlap_penalty(&theta, &target, 50.0).unwrap();
        let (b, _) = overlap_penalty(&theta, &target, 100.0).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn penalty_gradients_match_finite_differences() {
        let h = 1e-6;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let delta: Vec<f64> = (0..8).map(|_| rng.random_range(-2.5..2.5)).collect();
            let w = PenaltyWeights {
                lambda_kappa: rng.random_range(0.1..3.0),
                kappa_mse_weight: rng.random_range(0.0..1.0),
                kappa_sl1_weight: rng.random_range(0.0..1.0),
                kappa_var_weight: rng.random_range(0.0..2.0),
                ..Default::default()
            };
            let p = kappa_penalty(&delta, &w).unwrap();
            for k in 0..8 {
                let (mut a, mut b) = (delta.clone(), delta.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (kappa_penalty(&a, &w).unwrap().total() - kappa_penalty(&b, &w).unwrap().total()) / (2.0 * h);
                assert!(rel(fd, p.grad[k]) < 1e-4, "{fd} vs {}", p.grad[k]);
            }
            let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = overlap_penalty(&delta, &target, 7.0).unwrap();
            for k in 0..8 {
                let (mut a, mut b) = (delta.clone(), delta.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (overlap_penalty(&a, &target, 7.0).unwrap().0 - overlap_penalty(&b, &target, 7.0).unwrap().0)
                    / (2.0 * h);
                assert!(rel(fd, g[k]) < 1e-4);
            }
        }
    }

    fn random_outputs(kinds: &[HeadKind], arms: usize, rows: usize, rng: &mut ChaCha8Rng) -> HeadOutputs {
        let layout = HeadLayout::new(kinds.to_vec(), arms);
        let w = layout.width();
        let data = (0..rows * w).map(|_| rng.random_range(-1.5..1.5)).collect();
        HeadOutputs {
            layout,
            params: Matrix::from_vec(rows, w, data).unwrap(),
        }
    }

    #[test]
    fn induced_gradients_match_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [HeadKind::Binary, HeadKind::Gaussian, HeadKind::Categorical(2)] {
            let obs = random_outputs(&[kind], 2, 8, &mut rng);
            let flip = random_outputs(&[kind], 2, 8, &mut rng);
            let arms: Vec<u8> = (0..8).map(|i| (i % 3 == 0) as u8).collect();
            let up: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f_tau = |o: &HeadOutputs| {
                induced_tau(o, 0)
                    .unwrap()
                    .iter()
                    .zip(&up)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let mut g = obs.zero_grad();
            induced_tau_backward(&obs, 0, &up, &mut g).unwrap();
            let f_kappa = |o: &HeadOutputs, f: &HeadOutputs| {
                induced_kappa(o, f, 0, &arms)
                    .unwrap()
                    .iter()
                    .zip(&up)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            };
            let (mut go, mut gf) = (obs.zero_grad(), flip.zero_grad());
            induced_kappa_backward(&obs, &flip, 0, &arms, &up, &mut go, &mut gf).unwrap();
            for k in 0..obs.params.data.len() {
                let (mut a, mut b) = (obs.clone(), obs.clone());
                a.params.data[k] += h;
                b.params.data[k] -= h;
                let fd = (f_tau(&a) - f_tau(&b)) / (2.0 * h);
                assert!((fd - g.data[k]).abs() < 1e-4 * fd.abs().max(1e-3));
                let fd = (f_kappa(&a, &flip) - f_kappa(&b, &flip)) / (2.0 * h);
                assert!((fd - go.data[k]).abs() < 1e-4 * fd.abs().max(1e-3));
                let (mut a, mut b) = (flip.clone(), flip.clone());
                a.params.data[k] += h;
                b.params.data[k] -= h;
                let fd = (f_kappa(&obs, &a) - f_kappa(&obs, &b)) / (2.0 * h);
                assert!((fd - gf.data[k]).abs() < 1e-4 * fd.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn density_ratio_gradient_matches_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kinds = [HeadKind::Gaussian, HeadKind::Binary, HeadKind::Categorical(3)];
        let t0 = random_outputs(&kinds, 1, 8, &mut rng);
        let t1 = random_outputs(&kinds, 1, 8, &mut rng);
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|_| {
                vec![
                    rng.random_range(-1.0..1.0),
                    f64::from(rng.random_range(0..2u8)),
                    f64::from(rng.random_range(0..3u8)),
                ]
            })
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let up: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |a: &HeadOutputs, b: &HeadOutputs| {
            log_density_ratio(&x, a, b)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(p, q)| p * q)
                .sum::<f64>()
        };
        let (mut g0, mut g1) = (t0.zero_grad(), t1.zero_grad());
        log_density_ratio_backward(&x, &t0, &t1, &up, &mut g0, &mut g1);
        for k in 0..t0.params.data.len() {
            let (mut a, mut b) = (t0.clone(), t0.clone());
            a.params.data[k] += h;
            b.params.data[k] -= h;
            let fd = (f(&a, &t1) - f(&b, &t1)) / (2.0 * h);
            assert!(rel(fd, g0.data[k]) < 1e-4);
            let (mut a, mut b) = (t1.clone(), t1.clone());
            a.params.data[k] += h;
            b.params.data[k] -= h;
            let fd = (f(&t0, &a) - f(&t0, &b)) / (2.0 * h);
            assert!(rel(fd, g1.data[k]) < 1e-4);
        }
    }

    proptest::proptest! {
        #[test]
        fn density_ratio_antisymmetric(vals in proptest::collection::vec(-3.0f64..3.0, 12), x in -2.0f64..2.0, b in 0u8..2) {
            let t0 = single(vec![HeadKind::Gaussian, HeadKind::Binary, HeadKind::Categorical(3)], vec![vals[0..6].to_vec()]);
            let t1 = single(vec![HeadKind::Gaussian, HeadKind::Binary, HeadKind::Categorical(3)], vec![vals[6..12].to_vec()]);
            let xm = Matrix::from_rows(&[vec![x, f64::from(b), 1.0]]).unwrap();
            let fwd = log_density_ratio(&xm, &t0, &t1).unwrap()[0];
            let rev = log_density_ratio(&xm, &t1, &t0).unwrap()[0];
            proptest::prop_assert_eq!(fwd, -rev);
        }

        #[test]
        fn penalties_permutation_invariant(delta in proptest::collection::vec(-3.0f64..3.0, 1..16), seed in 0u64..1000) {
            let w = PenaltyWeights::default();
            let mut shuffled = delta.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = tau_penalty(&delta, &w).unwrap().total();
            let b = tau_penalty(&shuffled, &w).unwrap().total();
            proptest::prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn binary_tau_bounded(l0 in -500.0f64..500.0, l1 in -500.0f64..500.0) {
            let t = induced_tau(&po(HeadKind::Binary, vec![vec![l0, l1]]), 0).unwrap()[0];
            proptest::prop_assert!((-1.0..=1.0).contains(&t));
        }
    }
}
