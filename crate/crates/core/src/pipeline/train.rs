use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::design::gather_rows;
use crate::bgmm::{BgmmFitConfig, BgmmModel};
use crate::cvae::{kl_term, reconstruction_loss, reparameterize, reparameterize_backward, Cvae, HeadOutputs};
use crate::error::{Error, Result};
use crate::nn::{Adam, Matrix};
use crate::objective::{
    induced_kappa, induced_kappa_backward, induced_tau, induced_tau_backward, kappa_penalty, log_density_ratio,
    log_density_ratio_backward, overlap_penalty, tau_penalty, total_loss, LossComponents, PenaltyWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub kl_weight: f64,
    pub hidden: Vec<usize>,
    /// Overrides the default latent width (number of modeled variables).
    pub latent_dim: Option<usize>,
    pub penalties: PenaltyWeights,
    pub seed: u64,
    pub latent_jitter: bool,
    pub bgmm: BgmmFitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            max_epochs: 500,
            patience: 10,
            lr: 1e-3,
            val_fraction: 0.2,
            kl_weight: 1.0,
            hidden: vec![64],
            latent_dim: None,
            penalties: PenaltyWeights::default(),
            seed: 0,
            latent_jitter: true,
            bgmm: BgmmFitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Invalid(
                "batch_size, max_epochs and patience must be positive".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "val_fraction {} must lie in (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.lr > 0.0) || !(self.kl_weight >= 0.0) {
            return Err(Error::Invalid("lr must be positive and kl_weight non-negative".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.latent_dim == Some(0) {
            return Err(Error::Invalid("network widths must be positive".into()));
        }
        self.penalties.validate()
    }
}

/// One row of the per-epoch loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub split: Split,
    pub components: LossComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

/// A trained CVAE with the mixture fitted to its training-set latent means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedGenerator {
    pub schema_hash: String,
    pub cvae: Cvae,
    pub prior: BgmmModel,
    pub summary: TrainSummary,
}

/// Everything a generator needs per row; built once before training.
pub(crate) trait Task {
    /// Forward pass over `rows`; with `noise` the posterior is sampled and
    /// gradients are accumulated, without it z = mu and nothing is stored.
    fn pass(&self, cvae: &mut Cvae, rows: &[usize], noise: Option<&Matrix>) -> Result<LossComponents>;
    /// Encoder inputs for the BGMM fit.
    fn encoder_inputs(&self, cvae: &Cvae, rows: &[usize]) -> Result<Matrix>;
}

pub(crate) struct PreTask {
    pub targets: Matrix,
    pub t: Vec<f64>,
    pub log_alpha: Vec<f64>,
    pub weights: PenaltyWeights,
}

pub(crate) struct PostTask {
    pub targets: Matrix,
    pub cond_obs: Matrix,
    pub cond_flip: Matrix,
    pub arms: Vec<u8>,
    pub tau: Vec<f64>,
    pub kappa: Vec<f64>,
    pub scale: f64,
    pub weights: PenaltyWeights,
}

fn column(v: &[f64], rows: &[usize]) -> Matrix {
    Matrix {
        rows: rows.len(),
        cols: 1,
        data: rows.iter().map(|&r| v[r]).collect(),
    }
}

fn pick<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&r| v[r]).collect()
}

/// Shared encoder half: returns (posterior, z, kl value, dmu, dlogvar buffers).
fn encode_and_sample(
    cvae: &mut Cvae,
    targets: &Matrix,
    cond: &Matrix,
    noise: Option<&Matrix>,
) -> Result<(crate::cvae::PosteriorParams, Matrix)> {
    let enc_in = cvae.encoder_input(targets, cond)?;
    let post = if noise.is_some() {
        cvae.encode_forward(&enc_in)?
    } else {
        cvae.encode_input(&enc_in)?
    };
    let z = match noise {
        Some(e) => reparameterize(&post, e)?,
        None => post.mu.clone(),
    };
    Ok((post, z))
}

fn finish_backward(
    cvae: &mut Cvae,
    post: &crate::cvae::PosteriorParams,
    noise: &Matrix,
    dz: &Matrix,
    mut dmu: Matrix,
    mut dlv: Matrix,
) -> Result<()> {
    let kw = cvae.config.kl_weight;
    dmu.data.iter_mut().chain(dlv.data.iter_mut()).for_each(|g| *g *= kw);
    reparameterize_backward(post, noise, dz, &mut dmu, &mut dlv);
    cvae.encode_backward(&dmu, &dlv)
}

fn decode_any(cvae: &mut Cvae, input: &Matrix, train: bool) -> Result<HeadOutputs> {
    if train {
        cvae.decode_forward(input)
    } else {
        cvae.decode_input(input)
    }
}

/// Sum of the latent-block gradients from the stacked halves.
fn latent_grad(d_in: &Matrix, b: usize, d: usize) -> Matrix {
    let mut dz = Matrix::zeros(b, d);
    for r in 0..b {
        for j in 0..d {
            dz.set(r, j, d_in.get(r, j) + d_in.get(b + r, j));
        }
    }
    dz
}

impl Task for PreTask {
    fn encoder_inputs(&self, cvae: &Cvae, rows: &[usize]) -> Result<Matrix> {
        cvae.encoder_input(&gather_rows(&self.targets, rows), &column(&self.t, rows))
    }

    fn pass(&self, cvae: &mut Cvae, rows: &[usize], noise: Option<&Matrix>) -> Result<LossComponents> {
        let b = rows.len();
        let scale = 1.0 / b as f64;
        let x = gather_rows(&self.targets, rows);
        let t = pick(&self.t, rows);
        let (post, z) = encode_and_sample(cvae, &x, &column(&self.t, rows), noise)?;
        let d = z.cols;
        let zero = Matrix::zeros(b, 1);
        let one = Matrix::from_vec(b, 1, vec![1.0; b])?;
        let dec_in = Matrix::vstack(&[&Matrix::hstack(&[&z, &zero])?, &Matrix::hstack(&[&z, &one])?])?;
        let out = decode_any(cvae, &dec_in, noise.is_some())?;
        let (o0, o1) = out.split_rows(b);

        // reconstruction uses the decode under each row's observed arm
        let mut sel = o0.clone();
        for (r, &tv) in t.iter().enumerate() {
            if tv == 1.0 {
                sel.params.row_mut(r).copy_from_slice(o1.params.row(r));
            }
        }
        let mut g_sel = sel.zero_grad();
        let recon = reconstruction_loss(&sel, &x, None, scale, &mut g_sel)?;
        let mut dmu = Matrix::zeros(b, d);
        let mut dlv = Matrix::zeros(b, d);
        let kl = kl_term(&post, scale, &mut dmu, &mut dlv);

        let la = log_density_ratio(&x, &o0, &o1)?;
        let target = pick(&self.log_alpha, rows);
        let (l_alpha, g_la) = overlap_penalty(&la, &target, self.weights.lambda_alpha)?;
        let comps = LossComponents {
            vae: recon + cvae.config.kl_weight * kl,
            kl,
            l_alpha,
            ..Default::default()
        };

        if let Some(noise) = noise {
            let (mut g0, mut g1) = (o0.zero_grad(), o1.zero_grad());
            for (r, &tv) in t.iter().enumerate() {
                let dst = if tv == 1.0 { &mut g1 } else { &mut g0 };
                dst.row_mut(r).copy_from_slice(g_sel.row(r));
            }
            if self.weights.lambda_alpha != 0.0 {
                log_density_ratio_backward(&x, &o0, &o1, &g_la, &mut g0, &mut g1);
            }
            let g = Matrix::vstack(&[&g0, &g1])?;
            let d_in = cvae.decode_backward(&g)?;
            let dz = latent_grad(&d_in, b, d);
            finish_backward(cvae, &post, noise, &dz, dmu, dlv)?;
        }
        Ok(comps)
    }
}

impl Task for PostTask {
    fn encoder_inputs(&self, cvae: &Cvae, rows: &[usize]) -> Result<Matrix> {
        cvae.encoder_input(&gather_rows(&self.targets, rows), &gather_rows(&self.cond_obs, rows))
    }

    fn pass(&self, cvae: &mut Cvae, rows: &[usize], noise: Option<&Matrix>) -> Result<LossComponents> {
        let b = rows.len();
        let scale = 1.0 / b as f64;
        let y = gather_rows(&self.targets, rows);
        let cond = gather_rows(&self.cond_obs, rows);
        let flip = gather_rows(&self.cond_flip, rows);
        let arms = pick(&self.arms, rows);
        let (post, z) = encode_and_sample(cvae, &y, &cond, noise)?;
        let d = z.cols;
        let dec_in = Matrix::vstack(&[&Matrix::hstack(&[&z, &cond])?, &Matrix::hstack(&[&z, &flip])?])?;
        let out = decode_any(cvae, &dec_in, noise.is_some())?;
        let (obs, flp) = out.split_rows(b);

        let mut g_obs = obs.zero_grad();
        let recon = reconstruction_loss(&obs, &y, Some(&arms), scale, &mut g_obs)?;
        let mut dmu = Matrix::zeros(b, d);
        let mut dlv = Matrix::zeros(b, d);
        let kl = kl_term(&post, scale, &mut dmu, &mut dlv);

        let s = self.scale;
        let tau_theta = induced_tau(&obs, 0)?;
        let d_tau: Vec<f64> = tau_theta
            .iter()
            .zip(pick(&self.tau, rows))
            .map(|(a, b)| s * a - b)
            .collect();
        let pt = tau_penalty(&d_tau, &self.weights)?;
        let kappa_theta = induced_kappa(&obs, &flp, 0, &arms)?;
        let d_kappa: Vec<f64> = kappa_theta
            .iter()
            .zip(pick(&self.kappa, rows))
            .map(|(a, b)| s * a - b)
            .collect();
        let pk = kappa_penalty(&d_kappa, &self.weights)?;
        let comps = LossComponents {
            vae: recon + cvae.config.kl_weight * kl,
            kl,
            l_tau_mean: pt.mean_term,
            l_tau_var: pt.var_term,
            l_kappa_mean: pk.mean_term,
            l_kappa_var: pk.var_term,
            ..Default::default()
        };

        if let Some(noise) = noise {
            let mut g_flip = flp.zero_grad();
            let gt: Vec<f64> = pt.grad.iter().map(|g| g * s).collect();
            induced_tau_backward(&obs, 0, &gt, &mut g_obs)?;
            let gk: Vec<f64> = pk.grad.iter().map(|g| g * s).collect();
            induced_kappa_backward(&obs, &flp, 0, &arms, &gk, &mut g_obs, &mut g_flip)?;
            let g = Matrix::vstack(&[&g_obs, &g_flip])?;
            let d_in = cvae.decode_backward(&g)?;
            let dz = latent_grad(&d_in, b, d);
            finish_backward(cvae, &post, noise, &dz, dmu, dlv)?;
        }
        Ok(comps)
    }
}

/// Mini-batch training with early stopping on validation total loss, then
/// the latent mixture fit. Returns the generator and its loss log.
pub(crate) fn train_generator<T: Task>(
    task: &T,
    mut cvae: Cvae,
    train_rows: &[usize],
    val_rows: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    schema_hash: &str,
    label: &str,
) -> Result<(TrainedGenerator, Vec<LossRecord>)> {
    let mut adam = Adam::new(cfg.lr);
    let mut order = train_rows.to_vec();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, cvae.clone());
    let mut epochs_run = 0;
    let d = cvae.latent_dim();
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(rng);
        let mut acc = LossComponents::default();
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut noise = Matrix::zeros(batch.len(), d);
            noise.data.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            cvae.zero_grad();
            let c = task.pass(&mut cvae, batch, Some(&noise))?;
            if !c.is_finite() {
                return Err(Error::Numerical(format!(
                    "{label} generator: non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            adam.step(&mut cvae)?;
            acc.add(&c.scaled(batch.len() as f64));
        }
        log.push(LossRecord {
            epoch,
            split: Split::Train,
            components: acc.scaled(1.0 / order.len() as f64),
        });
        let val = task.pass(&mut cvae, val_rows, None)?;
        if !val.is_finite() {
            return Err(Error::Numerical(format!(
                "{label} generator: non-finite validation loss at epoch {epoch}"
            )));
        }
        log.push(LossRecord {
            epoch,
            split: Split::Val,
            components: val,
        });
        let v = total_loss(&val);
        if v < best.0 {
            best = (v, epoch, cvae.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let (best_val_loss, best_epoch, mut cvae) = best;
    cvae.zero_grad();

    let enc_in = task.encoder_inputs(&cvae, train_rows)?;
    let post = cvae.encode_input(&enc_in)?;
    let var_sum: f64 = post.logvar.data.iter().map(|v| v.exp()).sum();
    let mut bgmm_cfg = cfg.bgmm.clone();
    bgmm_cfg.seed = cfg.bgmm.seed ^ cfg.seed;
    let (mut prior, _) = BgmmModel::fit(&post.mu, d, &bgmm_cfg)?;
    prior.jitter_var = var_sum / post.logvar.data.len() as f64;
    Ok((
        TrainedGenerator {
            schema_hash: schema_hash.to_string(),
            cvae,
            prior,
            summary: TrainSummary {
                best_epoch,
                epochs_run,
                best_val_loss,
            },
        },
        log,
    ))
}

/// Seeds a stream for one stage of the pipeline.
pub(crate) fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}
