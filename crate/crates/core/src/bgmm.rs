//! Truncated stick-breaking Dirichlet-process Gaussian mixture fitted by
//! variational inference, used as a latent prior at generation time.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::nn::loss::{logsumexp, LN_2PI};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgmmFitConfig {
    /// Stick-breaking concentration; `None` means 1/K_max.
    pub weight_concentration: Option<f64>,
    pub max_iter: usize,
    pub tol: f64,
    pub reg_covar: f64,
    pub n_init: usize,
    pub seed: u64,
}

impl Default for BgmmFitConfig {
    fn default() -> Self {
        BgmmFitConfig {
            weight_concentration: None,
            max_iter: 200,
            tol: 1e-4,
            reg_covar: 1e-6,
            n_init: 3,
            seed: 0,
        }
    }
}

/// Fitted mixture: expected weights, means and covariances of the
/// variational posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgmmModel {
    pub k_max: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// row-major d×d per component
    pub covariances: Vec<Vec<f64>>,
    /// lower Cholesky factor of each covariance, row-major
    pub cholesky: Vec<Vec<f64>>,
    pub jitter_var: f64,
    pub lower_bound: f64,
    pub converged: bool,
    pub n_iter: usize,
}

/// Per-restart diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub lower_bounds: Vec<f64>,
}

struct Priors {
    weight_concentration: f64,
    mean_precision: f64,
    mean: DVector<f64>,
    dof: f64,
    covariance: DMatrix<f64>,
}

/// Variational parameters during fitting.
struct State {
    conc_a: Vec<f64>,
    conc_b: Vec<f64>,
    mean_precision: Vec<f64>,
    means: Vec<DVector<f64>>,
    dof: Vec<f64>,
    covariances: Vec<DMatrix<f64>>,
    prec_chol: Vec<DMatrix<f64>>,
}

fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite; increase reg_covar".into()))
}

/// Upper-triangular factor U with U Uᵀ = Σ⁻¹, as in the precision-Cholesky convention.
fn precision_cholesky(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky_lower(cov)?;
    let d = cov.nrows();
    let inv_l = l
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(inv_l.transpose())
}

fn betaln(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Soft counts, weighted means and covariances (with reg_covar on the diagonal).
fn gaussian_stats(
    x: &[DVector<f64>],
    resp: &[Vec<f64>],
    k: usize,
    reg: f64,
) -> (Vec<f64>, Vec<DVector<f64>>, Vec<DMatrix<f64>>) {
    let d = x[0].len();
    let tiny = 10.0 * f64::EPSILON;
    let mut nk = vec![tiny; k];
    let mut xk = vec![DVector::zeros(d); k];
    for (xi, ri) in x.iter().zip(resp) {
        for j in 0..k {
            if ri[j] != 0.0 {
                nk[j] += ri[j];
                xk[j].axpy(ri[j], xi, 1.0);
            }
        }
    }
    for j in 0..k {
        xk[j] /= nk[j];
    }
    let mut sk = vec![DMatrix::zeros(d, d); k];
    for (xi, ri) in x.iter().zip(resp) {
        for j in 0..k {
            if ri[j] != 0.0 {
                let diff = xi - &xk[j];
                sk[j].ger(ri[j], &diff, &diff, 1.0);
            }
        }
    }
    for j in 0..k {
        sk[j] /= nk[j];
        for i in 0..d {
            sk[j][(i, i)] += reg;
        }
    }
    (nk, xk, sk)
}

fn m_step(x: &[DVector<f64>], resp: &[Vec<f64>], k: usize, reg: f64, p: &Priors) -> Result<State> {
    let (nk, xk, sk) = gaussian_stats(x, resp, k, reg);
    let conc_a: Vec<f64> = nk.iter().map(|n| 1.0 + n).collect();
    let mut conc_b = vec![p.weight_concentration; k];
    let mut tail = 0.0;
    for j in (0..k).rev() {
        conc_b[j] += tail;
        tail += nk[j];
    }
    let mean_precision: Vec<f64> = nk.iter().map(|n| p.mean_precision + n).collect();
    let means: Vec<DVector<f64>> = (0..k)
        .map(|j| (&p.mean * p.mean_precision + &xk[j] * nk[j]) / mean_precision[j])
        .collect();
    let dof: Vec<f64> = nk.iter().map(|n| p.dof + n).collect();
    let mut covariances = Vec::with_capacity(k);
    let mut prec_chol = Vec::with_capacity(k);
    for j in 0..k {
        let diff = &xk[j] - &p.mean;
        let mut c = &p.covariance + &sk[j] * nk[j];
        c.ger(nk[j] * p.mean_precision / mean_precision[j], &diff, &diff, 1.0);
        c /= dof[j];
        // symmetrize against round-off
        let c = (&c + c.transpose()) * 0.5;
        prec_chol.push(precision_cholesky(&c)?);
        covariances.push(c);
    }
    Ok(State {
        conc_a,
        conc_b,
        mean_precision,
        means,
        dof,
        covariances,
        prec_chol,
    })
}

/// Returns (log_prob_norm per row, log_resp).
fn e_step(x: &[DVector<f64>], s: &State) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = s.means.len();
    let d = x[0].len() as f64;
    let mut log_w = vec![0.0; k];
    let mut acc = 0.0;
    for j in 0..k {
        let dsum = digamma(s.conc_a[j] + s.conc_b[j]);
        log_w[j] = digamma(s.conc_a[j]) - dsum + acc;
        acc += digamma(s.conc_b[j]) - dsum;
    }
    let mut comp_const = vec![0.0; k];
    for j in 0..k {
        let log_det: f64 = s.prec_chol[j].diagonal().iter().map(|v| v.ln()).sum();
        let log_lambda = d * std::f64::consts::LN_2
            + (0..x[0].len())
                .map(|i| digamma(0.5 * (s.dof[j] - i as f64)))
                .sum::<f64>();
        comp_const[j] = log_w[j] + log_det - 0.5 * d * LN_2PI - 0.5 * d * s.dof[j].ln()
            + 0.5 * (log_lambda - d / s.mean_precision[j]);
    }
    let mut norms = Vec::with_capacity(x.len());
    let mut log_resp = Vec::with_capacity(x.len());
    let mut row = vec![0.0; k];
    for xi in x {
        for j in 0..k {
            let y = (xi - &s.means[j]).transpose() * &s.prec_chol[j];
            row[j] = comp_const[j] - 0.5 * y.norm_squared();
        }
        let lse = logsumexp(&row);
        norms.push(lse);
        log_resp.push(row.iter().map(|v| v - lse).collect());
    }
    (norms, log_resp)
}

fn lower_bound(log_resp: &[Vec<f64>], s: &State) -> f64 {
    let k = s.means.len();
    let d = s.means[0].len();
    let df = d as f64;
    let mut ent = 0.0;
    for row in log_resp {
        for &l in row {
            if l > f64::NEG_INFINITY {
                ent += l.exp() * l;
            }
        }
    }
    let mut log_wishart = 0.0;
    for j in 0..k {
        let log_det_chol: f64 =
            s.prec_chol[j].diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * df * s.dof[j].ln();
        log_wishart += -(s.dof[j] * log_det_chol
            + s.dof[j] * df * 0.5 * std::f64::consts::LN_2
            + (0..d).map(|i| ln_gamma(0.5 * (s.dof[j] - i as f64))).sum::<f64>());
    }
    let log_norm_weight = -(0..k).map(|j| betaln(s.conc_a[j], s.conc_b[j])).sum::<f64>();
    -ent - log_wishart - log_norm_weight - 0.5 * df * s.mean_precision.iter().map(|m| m.ln()).sum::<f64>()
}

/// Seeded k-means++ followed by Lloyd iterations; returns hard labels.
fn kmeans_labels(x: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.len();
    let mut centers: Vec<DVector<f64>> = vec![x[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = x.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x[next].clone());
        for (i, p) in x.iter().enumerate() {
            dist[i] = dist[i].min((p - &centers[centers.len() - 1]).norm_squared());
        }
    }
    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, p) in x.iter().enumerate() {
            let best = (0..k)
                .map(|j| (j, (p - &centers[j]).norm_squared()))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
                .0;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        let d = x[0].len();
        let mut sums = vec![DVector::zeros(d); k];
        let mut counts = vec![0usize; k];
        for (p, &l) in x.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = &sums[j] / counts[j] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn run_vi(
    x: &[DVector<f64>],
    init_resp: Vec<Vec<f64>>,
    k: usize,
    cfg: &BgmmFitConfig,
    p: &Priors,
) -> Result<(State, f64, bool, Vec<f64>)> {
    let mut state = m_step(x, &init_resp, k, cfg.reg_covar, p)?;
    let mut lb = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        let prev = lb;
        let (_, log_resp) = e_step(x, &state);
        let resp: Vec<Vec<f64>> = log_resp.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        state = m_step(x, &resp, k, cfg.reg_covar, p)?;
        lb = lower_bound(&log_resp, &state);
        if !lb.is_finite() {
            return Err(Error::Numerical("non-finite variational bound".into()));
        }
        trace.push(lb);
        if (lb - prev).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok((state, lb, converged, trace))
}

fn empirical_covariance(x: &[DVector<f64>], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = mean.len();
    let mut c = DMatrix::zeros(d, d);
    for xi in x {
        let diff = xi - mean;
        c.ger(1.0, &diff, &diff, 1.0);
    }
    c / (x.len() as f64 - 1.0)
}

impl BgmmModel {
    /// Fits the mixture with truncation level `k_max`. Restarts are the
    /// seeded k-means initializations plus one start with every point in a
    /// single component; the highest bound wins.
    pub fn fit(latents: &Matrix, k_max: usize, cfg: &BgmmFitConfig) -> Result<(BgmmModel, FitTrace)> {
        let (n, d) = (latents.rows, latents.cols);
        if d == 0 || k_max == 0 {
            return Err(Error::Invalid("mixture needs positive dimension and truncation".into()));
        }
        if n < 10 * d || n < 2 {
            return Err(Error::Invalid(format!(
                "{n} rows is too few for a {d}-dimensional mixture (need {})",
                10 * d
            )));
        }
        if !latents.is_finite() {
            return Err(Error::Numerical("non-finite latent values".into()));
        }
        if !(cfg.tol > 0.0 && cfg.reg_covar > 0.0 && cfg.max_iter > 0 && cfg.n_init > 0) {
            return Err(Error::Invalid("mixture fit settings must be positive".into()));
        }
        let x: Vec<DVector<f64>> = (0..n).map(|r| DVector::from_row_slice(latents.row(r))).collect();
        let mean = x.iter().fold(DVector::zeros(d), |a, b| a + b) / n as f64;
        let covariance = empirical_covariance(&x, &mean);
        let priors = Priors {
            weight_concentration: cfg.weight_concentration.unwrap_or(1.0 / k_max as f64),
            mean_precision: 1.0,
            mean,
            dof: d as f64,
            covariance,
        };

        let mut inits: Vec<Vec<Vec<f64>>> = Vec::new();
        for i in 0..cfg.n_init {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let labels = kmeans_labels(&x, k_max.min(n), &mut rng);
            inits.push(
                labels
                    .iter()
                    .map(|&l| (0..k_max).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
                    .collect(),
            );
        }
        inits.push(vec![(0..k_max).map(|j| if j == 0 { 1.0 } else { 0.0 }).collect(); n]);

        let mut best: Option<(State, f64, bool, Vec<f64>)> = None;
        for resp in inits {
            let run = run_vi(&x, resp, k_max, cfg, &priors)?;
            if best.as_ref().is_none_or(|b| run.1 > b.1) {
                best = Some(run);
            }
        }
        let (state, lb, converged, trace) = best.expect("at least one restart");

        let mut weights = Vec::with_capacity(k_max);
        let mut stick = 1.0;
        for j in 0..k_max {
            let s = state.conc_a[j] + state.conc_b[j];
            weights.push(state.conc_a[j] / s * stick);
            stick *= state.conc_b[j] / s;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let mut cholesky = Vec::with_capacity(k_max);
        for c in &state.covariances {
            cholesky.push(row_major(&cholesky_lower(c)?));
        }
        let model = BgmmModel {
            k_max,
            dim: d,
            weights,
            means: state.means.iter().map(|m| m.iter().copied().collect()).collect(),
            covariances: state.covariances.iter().map(row_major).collect(),
            cholesky,
            jitter_var: 0.0,
            lower_bound: lb,
            converged,
            n_iter: trace.len(),
        };
        Ok((model, FitTrace { lower_bounds: trace }))
    }

    /// Builds a model directly from mixture parameters.
    pub fn from_components(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<f64>>) -> Result<BgmmModel> {
        let k = weights.len();
        let d = means.first().map_or(0, Vec::len);
        if k == 0 || means.len() != k || covariances.len() != k || covariances.iter().any(|c| c.len() != d * d) {
            return Err(Error::Shape("inconsistent mixture parameters".into()));
        }
        let mut cholesky = Vec::with_capacity(k);
        for c in &covariances {
            cholesky.push(row_major(&cholesky_lower(&DMatrix::from_row_slice(d, d, c))?));
        }
        let model = BgmmModel {
            k_max: k,
            dim: d,
            weights,
            means,
            covariances,
            cholesky,
            jitter_var: 0.0,
            lower_bound: 0.0,
            converged: true,
            n_iter: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(*w >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::CorruptBundle("mixture weights are not a simplex".into()));
        }
        if !(self.jitter_var >= 0.0) {
            return Err(Error::CorruptBundle("negative jitter variance".into()));
        }
        Ok(())
    }

    pub fn effective_components(&self, threshold: f64) -> usize {
        effective_components(&self.weights, threshold)
    }

    /// log Σ_k π_k N(z | μ_k, Σ_k).
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let d = self.dim;
        let terms: Vec<f64> = (0..self.k_max)
            .map(|k| {
                if self.weights[k] <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let l = &self.cholesky[k];
                // forward substitution L y = z − μ
                let mut y = vec![0.0; d];
                let mut log_det = 0.0;
                for i in 0..d {
                    let mut v = z[i] - self.means[k][i];
                    for j in 0..i {
                        v -= l[i * d + j] * y[j];
                    }
                    y[i] = v / l[i * d + i];
                    log_det += l[i * d + i].ln();
                }
                let q: f64 = y.iter().map(|v| v * v).sum();
                self.weights[k].ln() - 0.5 * (d as f64 * LN_2PI + q) - log_det
            })
            .collect();
        logsumexp(&terms)
    }

    /// Draws `n` latents; jitter adds N(0, jitter_var·I) when `jitter` is set.
    pub fn sample(&self, n: usize, seed: u64, jitter: bool) -> Result<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(n, &mut rng, jitter)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, jitter: bool) -> Result<Matrix> {
        let d = self.dim;
        let pick = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::NotFitted(format!("mixture weights unusable: {e}")))?;
        let sd = if jitter { self.jitter_var.sqrt() } else { 0.0 };
        let mut out = Matrix::zeros(n, d);
        let mut eps = vec![0.0; d];
        for r in 0..n {
            let k = pick.sample(rng);
            eps.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
            let l = &self.cholesky[k];
            let row = out.row_mut(r);
            for i in 0..d {
                let mut v = self.means[k][i];
                for j in 0..=i {
                    v += l[i * d + j] * eps[j];
                }
                row[i] = v;
            }
            if sd > 0.0 {
                for v in row.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *v += sd * e;
                }
            }
        }
        Ok(out)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

pub fn effective_components(weights: &[f64], threshold: f64) -> usize {
    weights.iter().filter(|w| **w > threshold).count()
}
