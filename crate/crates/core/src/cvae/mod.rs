//! Conditional VAE with per-variable likelihood heads.

mod heads;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use heads::{HeadKind, HeadLayout, HeadOutputs};

use crate::error::{Error, Result};
use crate::nn::loss::{bernoulli_nll, categorical_nll, gaussian_nll, kl_standard_gaussian};
use crate::nn::{Matrix, Mlp, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub kind: HeadKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvaeConfig {
    pub targets: Vec<TargetSpec>,
    pub cond_width: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub kl_weight: f64,
    pub logvar_clamp: (f64, f64),
    pub po_mode: bool,
}

impl CvaeConfig {
    /// Defaults: latent width equal to the number of targets, one hidden layer of 64.
    pub fn new(targets: Vec<TargetSpec>, cond_width: usize) -> Self {
        CvaeConfig {
            latent_dim: targets.len().max(1),
            targets,
            cond_width,
            hidden: vec![64],
            kl_weight: 1.0,
            logvar_clamp: (-7.0, 7.0),
            po_mode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Invalid("a CVAE needs at least one target".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Invalid("latent_dim must be at least 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Invalid("hidden widths must be nonempty and positive".into()));
        }
        let (lo, hi) = self.logvar_clamp;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid(format!("bad logvar clamp [{lo}, {hi}]")));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Invalid("kl_weight must be non-negative".into()));
        }
        for t in &self.targets {
            match t.kind {
                HeadKind::Categorical(k) if k < 2 => {
                    return Err(Error::Invalid(format!("target '{}' has fewer than 2 classes", t.name)))
                }
                HeadKind::Categorical(k) if self.po_mode && k > 2 => {
                    return Err(Error::Invalid(format!(
                        "potential-outcome mode does not support the {k}-class target '{}'",
                        t.name
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn arms(&self) -> usize {
        if self.po_mode {
            2
        } else {
            1
        }
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout::new(self.targets.iter().map(|t| t.kind).collect(), self.arms())
    }

    pub fn target_input_width(&self) -> usize {
        self.targets.iter().map(|t| t.kind.input_width()).sum()
    }
}

/// Diagonal Gaussian posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: Matrix,
    pub logvar: Matrix,
}

/// z = mu + exp(logvar / 2) · noise.
pub fn reparameterize(post: &PosteriorParams, noise: &Matrix) -> Result<Matrix> {
    if noise.rows != post.mu.rows || noise.cols != post.mu.cols {
        return Err(Error::Shape("noise shape differs from posterior".into()));
    }
    let mut z = post.mu.clone();
    for ((zi, lv), e) in z.data.iter_mut().zip(&post.logvar.data).zip(&noise.data) {
        *zi += (0.5 * lv).exp() * e;
    }
    Ok(z)
}

/// Pulls a gradient on z back onto (mu, logvar), accumulating.
pub fn reparameterize_backward(
    post: &PosteriorParams,
    noise: &Matrix,
    dz: &Matrix,
    dmu: &mut Matrix,
    dlogvar: &mut Matrix,
) {
    for i in 0..dz.data.len() {
        dmu.data[i] += dz.data[i];
        dlogvar.data[i] += dz.data[i] * 0.5 * (0.5 * post.logvar.data[i]).exp() * noise.data[i];
    }
}

/// L_VAE = recon + λ_KL · kl.
pub fn elbo_loss(recon: f64, kl: f64, kl_weight: f64) -> f64 {
    recon + kl_weight * kl
}

/// `scale · Σ_rows KL(q || N(0, I))`, with gradients accumulated.
pub fn kl_term(post: &PosteriorParams, scale: f64, dmu: &mut Matrix, dlogvar: &mut Matrix) -> f64 {
    let d = post.mu.cols;
    let (mut gm, mut gl) = (vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for r in 0..post.mu.rows {
        total += kl_standard_gaussian(post.mu.row(r), post.logvar.row(r), &mut gm, &mut gl);
        for j in 0..d {
            dmu.add_at(r, j, scale * gm[j]);
            dlogvar.add_at(r, j, scale * gl[j]);
        }
    }
    scale * total
}

/// `scale · Σ_rows Σ_targets NLL`. `targets` holds one column per target:
/// standardized values, 0/1, or class indices. In potential-outcome mode
/// only the observed arm of each row contributes. Gradients are accumulated
/// into `grad` (same shape as `outputs.params`).
pub fn reconstruction_loss(
    outputs: &HeadOutputs,
    targets: &Matrix,
    observed_arm: Option<&[u8]>,
    scale: f64,
    grad: &mut Matrix,
) -> Result<f64> {
    let layout = &outputs.layout;
    if targets.rows != outputs.n_rows() || targets.cols != layout.kinds.len() {
        return Err(Error::Shape(format!(
            "targets {}x{} vs outputs for {} rows and {} heads",
            targets.rows,
            targets.cols,
            outputs.n_rows(),
            layout.kinds.len()
        )));
    }
    if layout.arms > 1 {
        match observed_arm {
            Some(a) if a.len() == targets.rows => {}
            Some(_) => return Err(Error::Shape("observed_arm length differs from batch".into())),
            None => {
                return Err(Error::Invalid(
                    "potential-outcome reconstruction needs the observed arm".into(),
                ))
            }
        }
    }
    let mut total = 0.0;
    let mut scratch = Vec::new();
    for r in 0..targets.rows {
        let arm = match observed_arm {
            Some(a) if layout.arms > 1 => a[r] as usize,
            _ => 0,
        };
        let p = outputs.params.row(r);
        for (h, kind) in layout.kinds.iter().enumerate() {
            let o = layout.offset(h, arm);
            let x = targets.get(r, h);
            match *kind {
                HeadKind::Gaussian => {
                    let (l, gmu, glv) = gaussian_nll(x, p[o], p[o + 1]);
                    total += l;
                    grad.add_at(r, o, scale * gmu);
                    grad.add_at(r, o + 1, scale * glv);
                }
                HeadKind::Binary => {
                    let (l, g) = bernoulli_nll(x, p[o]);
                    total += l;
                    grad.add_at(r, o, scale * g);
                }
                HeadKind::Categorical(k) => {
                    let idx = x as usize;
                    if x < 0.0 || idx >= k || x.fract() != 0.0 {
                        return Err(Error::Invalid(format!("class index {x} outside 0..{k}")));
                    }
                    scratch.resize(k, 0.0);
                    total += categorical_nll(idx, &p[o..o + k], &mut scratch);
                    for (j, g) in scratch.iter().enumerate() {
                        grad.add_at(r, o + j, scale * g);
                    }
                }
            }
        }
    }
    Ok(scale * total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cvae {
    pub config: CvaeConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    #[serde(skip)]
    enc_raw: Option<Matrix>,
    #[serde(skip)]
    dec_raw: Option<Matrix>,
}

impl Cvae {
    pub fn new<R: Rng + ?Sized>(config: CvaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let enc_in = config.target_input_width() + config.cond_width;
        let dec_in = config.latent_dim + config.cond_width;
        let encoder = Mlp::new(enc_in, &config.hidden, 2 * config.latent_dim, rng);
        let decoder = Mlp::new(dec_in, &config.hidden, config.layout().width(), rng);
        Ok(Cvae {
            config,
            encoder,
            decoder,
            enc_raw: None,
            dec_raw: None,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// One-hot expands categorical targets and appends the conditioning block.
    pub fn encoder_input(&self, targets: &Matrix, cond: &Matrix) -> Result<Matrix> {
        if targets.rows != cond.rows {
            return Err(Error::Shape(format!(
                "{} target rows vs {} conditioning rows",
                targets.rows, cond.rows
            )));
        }
        if targets.cols != self.config.targets.len() || cond.cols != self.config.cond_width {
            return Err(Error::Shape(format!(
                "expected {} targets and {} conditioning columns, got {} and {}",
                self.config.targets.len(),
                self.config.cond_width,
                targets.cols,
                cond.cols
            )));
        }
        let width = self.config.target_input_width() + cond.cols;
        let mut out = Matrix::zeros(targets.rows, width);
        for r in 0..targets.rows {
            let row = out.row_mut(r);
            let mut c = 0;
            for (h, t) in self.config.targets.iter().enumerate() {
                let v = targets.get(r, h);
                match t.kind {
                    HeadKind::Categorical(k) => {
                        let idx = v as usize;
                        if v < 0.0 || idx >= k {
                            return Err(Error::Invalid(format!("class index {v} outside 0..{k}")));
                        }
                        row[c + idx] = 1.0;
                        c += k;
                    }
                    _ => {
                        row[c] = v;
                        c += 1;
                    }
                }
            }
            row[c..].copy_from_slice(cond.row(r));
        }
        Ok(out)
    }

    pub fn decoder_input(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        if z.cols != self.config.latent_dim || cond.cols != self.config.cond_width {
            return Err(Error::Shape(format!(
                "decoder expects {} latent and {} conditioning columns, got {} and {}",
                self.config.latent_dim, self.config.cond_width, z.cols, cond.cols
            )));
        }
        Matrix::hstack(&[z, cond])
    }

    fn split_posterior(&self, raw: &Matrix) -> PosteriorParams {
        let d = self.config.latent_dim;
        let (lo, hi) = self.config.logvar_clamp;
        let mu = raw.slice_cols(0, d);
        let mut logvar = raw.slice_cols(d, 2 * d);
        logvar.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        PosteriorParams { mu, logvar }
    }

    fn clamp_heads(&self, mut raw: Matrix) -> HeadOutputs {
        let layout = self.config.layout();
        let (lo, hi) = self.config.logvar_clamp;
        for c in layout.logvar_columns() {
            for r in 0..raw.rows {
                let v = raw.get(r, c);
                raw.set(r, c, v.clamp(lo, hi));
            }
        }
        HeadOutputs { layout, params: raw }
    }

    /// Inference-time encoding (no caching).
    pub fn encode(&self, targets: &Matrix, cond: &Matrix) -> Result<PosteriorParams> {
        let input = self.encoder_input(targets, cond)?;
        Ok(self.split_posterior(&self.encoder.apply(&input)?))
    }

    /// Inference-time decoding (no caching).
    pub fn decode(&self, z: &Matrix, cond: &Matrix) -> Result<HeadOutputs> {
        let input = self.decoder_input(z, cond)?;
        self.decode_input(&input)
    }

    /// Inference-time decoding of an already assembled decoder input.
    pub fn decode_input(&self, input: &Matrix) -> Result<HeadOutputs> {
        Ok(self.clamp_heads(self.decoder.apply(input)?))
    }

    /// Inference-time encoding of an already assembled encoder input.
    pub fn encode_input(&self, input: &Matrix) -> Result<PosteriorParams> {
        Ok(self.split_posterior(&self.encoder.apply(input)?))
    }

    pub fn encode_forward(&mut self, input: &Matrix) -> Result<PosteriorParams> {
        let raw = self.encoder.forward(input)?;
        let post = self.split_posterior(&raw);
        self.enc_raw = Some(raw);
        Ok(post)
    }

    pub fn encode_backward(&mut self, dmu: &Matrix, dlogvar: &Matrix) -> Result<()> {
        let raw = self
            .enc_raw
            .take()
            .ok_or_else(|| Error::Shape("encoder backward without forward".into()))?;
        let d = self.config.latent_dim;
        let (lo, hi) = self.config.logvar_clamp;
        let mut g = Matrix::zeros(raw.rows, 2 * d);
        for r in 0..raw.rows {
            for j in 0..d {
                g.set(r, j, dmu.get(r, j));
                let v = raw.get(r, d + j);
                if v >= lo && v <= hi {
                    g.set(r, d + j, dlogvar.get(r, j));
                }
            }
        }
        self.encoder.backward(&g)?;
        Ok(())
    }

    pub fn decode_forward(&mut self, input: &Matrix) -> Result<HeadOutputs> {
        let raw = self.decoder.forward(input)?;
        self.dec_raw = Some(raw.clone());
        Ok(self.clamp_heads(raw))
    }

    /// Returns the gradient w.r.t. the decoder input (latent block first).
    pub fn decode_backward(&mut self, grad: &Matrix) -> Result<Matrix> {
        let raw = self
            .dec_raw
            .take()
            .ok_or_else(|| Error::Shape("decoder backward without forward".into()))?;
        let (lo, hi) = self.config.logvar_clamp;
        let mut g = grad.clone();
        for c in self.config.layout().logvar_columns() {
            for r in 0..raw.rows {
                let v = raw.get(r, c);
                if v < lo || v > hi {
                    g.set(r, c, 0.0);
                }
            }
        }
        self.decoder.backward(&g)
    }

    pub fn zero_grad(&mut self) {
        self.encoder.zero_grad();
        self.decoder.zero_grad();
    }

    /// Plain negative ELBO (batch mean) with gradients accumulated. `arms`
    /// conditions the decode and selects the reconstructed arm in
    /// potential-outcome mode.
    pub fn elbo_batch(&mut self, targets: &Matrix, cond: &Matrix, noise: &Matrix, arms: Option<&[u8]>) -> Result<f64> {
        let n = targets.rows;
        let scale = 1.0 / n.max(1) as f64;
        let enc_in = self.encoder_input(targets, cond)?;
        let post = self.encode_forward(&enc_in)?;
        let z = reparameterize(&post, noise)?;
        let dec_in = self.decoder_input(&z, cond)?;
        let out = self.decode_forward(&dec_in)?;
        let mut d_out = out.zero_grad();
        let recon = reconstruction_loss(&out, targets, arms, scale, &mut d_out)?;
        let mut dmu = Matrix::zeros(n, self.latent_dim());
        let mut dlv = Matrix::zeros(n, self.latent_dim());
        let kw = self.config.kl_weight;
        let kl = kl_term(&post, scale, &mut dmu, &mut dlv);
        dmu.data.iter_mut().chain(dlv.data.iter_mut()).for_each(|g| *g *= kw);
        let d_in = self.decode_backward(&d_out)?;
        let dz = d_in.slice_cols(0, self.latent_dim());
        reparameterize_backward(&post, noise, &dz, &mut dmu, &mut dlv);
        self.encode_backward(&dmu, &dlv)?;
        Ok(elbo_loss(recon, kl, kw))
    }
}

impl Parameters for Cvae {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64])) {
        self.encoder.for_each_param(f);
        self.decoder.for_each_param(f);
    }
}
